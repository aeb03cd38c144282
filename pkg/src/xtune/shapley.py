"""Exact interventional Shapley values and beeswarm summaries."""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .forest import RandomForest

MAX_EXACT_FEATURES = 16
DEFAULT_BACKGROUND_CAP = 100
_CHUNK_ROWS = 1 << 20


class ExplainError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundSet:
    rows: np.ndarray
    features: tuple[str, ...]
    cap: int = DEFAULT_BACKGROUND_CAP
    seed: int = 0
    source: str = ""

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] == 0:
            raise ExplainError("background set must be a nonempty 2-D array")
        if self.rows.shape[1] != len(self.features):
            raise ExplainError("background width does not match its feature names")

    @classmethod
    def from_rows(cls, rows, features, cap: int = DEFAULT_BACKGROUND_CAP, seed: int = 0,
                  source: str = "") -> "BackgroundSet":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.shape[0] > cap:
            pick = np.random.Generator(np.random.PCG64(seed)).choice(rows.shape[0], cap, replace=False)
            rows = rows[np.sort(pick)]
        return cls(rows, tuple(features), cap, seed, source)

    @classmethod
    def from_dataset(cls, d, split: str | None = "train", cap: int = DEFAULT_BACKGROUND_CAP,
                     seed: int = 0) -> "BackgroundSet":
        src = d.rows(split) if split else d
        return cls.from_rows(src.X, d.features, cap, seed, source=f"{split or 'all'} rows")

    def describe(self) -> dict:
        return {"rows": int(self.rows.shape[0]), "cap": self.cap, "seed": self.seed,
                "source": self.source, "value_function": "interventional"}


@dataclass(frozen=True)
class Explanation:
    features: tuple[str, ...]
    x: np.ndarray
    phi: np.ndarray
    base_value: float
    prediction: float
    target_output: object = None

    @property
    def efficiency_gap(self) -> float:
        return abs(self.base_value + math.fsum(self.phi) - self.prediction)


def _score_fn(model, target_class):
    """(callable on 2-D arrays, explained class)."""
    if isinstance(model, RandomForest):
        if model.task == "classify":
            return model.score_function(target_class), target_class
        return model.predict, None
    if callable(model):
        return model, target_class
    raise TypeError("model must be a RandomForest or a callable score function")


def _subset_masks(d: int) -> np.ndarray:
    # row s has bit j set when feature j is in coalition s
    s = np.arange(1 << d)[:, None]
    return ((s >> np.arange(d)[None, :]) & 1).astype(bool)


def _bg_mean(vals: np.ndarray) -> np.ndarray:
    # fixed sequential order over the last axis, so equal inputs give equal means
    # wherever they sit in memory (numpy's pairwise sums depend on alignment);
    # offsetting by the first value returns a constant row exactly
    first = vals[..., 0]
    acc = np.zeros(vals.shape[:-1])
    for b in range(1, vals.shape[-1]):
        acc += vals[..., b] - first
    return first + acc / vals.shape[-1]


def coalition_values(f, X: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """v[i, s] for every instance ``X[i]`` and coalition bitmask ``s``.

    v(S) is the mean of f over composites taking features in S from the
    instance and the rest from each background row.  The full coalition is the
    model output itself and the empty one is the background mean.
    """
    X = np.atleast_2d(X)
    n, d = X.shape
    nb = bg.shape[0]
    masks = _subset_masks(d)
    ns = masks.shape[0]
    out = np.empty((n, ns))
    per_instance = ns * nb
    step = max(1, _CHUNK_ROWS // per_instance)
    for i0 in range(0, n, step):
        xs = X[i0:i0 + step]
        comp = np.where(masks[None, :, None, :], xs[:, None, None, :], bg[None, None, :, :])
        vals = np.asarray(f(comp.reshape(-1, d)), dtype=np.float64)
        out[i0:i0 + step] = _bg_mean(vals.reshape(len(xs), ns, nb))
    out[:, ns - 1] = np.asarray(f(X), dtype=np.float64)
    return out


def value_function(model, x, subset, bg: BackgroundSet, target_class=None) -> float:
    f, _ = _score_fn(model, target_class)
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    subset = sorted(set(int(j) for j in subset))
    if any(not 0 <= j < d for j in subset):
        raise ExplainError("coalition refers to features outside the schema")
    if len(subset) == d:
        return float(np.asarray(f(x[None, :]))[0])
    comp = bg.rows.copy()
    comp[:, subset] = x[subset]
    return float(_bg_mean(np.asarray(f(comp), dtype=np.float64)))


def _weights(d: int) -> np.ndarray:
    return np.array([math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d)
                     for k in range(d)])


def shapley_from_values(v: np.ndarray, d: int) -> np.ndarray:
    """phi from coalition values ``v`` of shape (..., 2**d)."""
    masks = _subset_masks(d)
    size = masks.sum(axis=1)
    w = _weights(d)
    phi = np.empty(v.shape[:-1] + (d,))
    for j in range(d):
        without = np.flatnonzero(~masks[:, j])
        diff = v[..., without | (1 << j)] - v[..., without]
        phi[..., j] = diff @ w[size[without]]
    return phi


def _check(model, x_width: int, bg: BackgroundSet):
    if x_width > MAX_EXACT_FEATURES:
        raise ExplainError(f"{x_width} features exceed the exact limit of {MAX_EXACT_FEATURES}; "
                           "explain a subset of the schema instead")
    if bg.rows.shape[1] != x_width:
        raise ExplainError("background and instance widths differ")
    if isinstance(model, RandomForest) and model.n_features != x_width:
        raise ExplainError("model and instance widths differ")


def shapley_exact(model, x, bg: BackgroundSet, target_class=None) -> Explanation:
    x = np.asarray(x, dtype=np.float64).ravel()
    _check(model, x.shape[0], bg)
    if isinstance(model, RandomForest) and model.task == "classify" and target_class is None:
        target_class = model.predict(x[None, :])[0]
    f, target = _score_fn(model, target_class)
    v = coalition_values(f, x[None, :], bg.rows)[0]
    phi = shapley_from_values(v, x.shape[0])
    return Explanation(bg.features, x, phi, float(v[0]), float(v[-1]), target)


def explain_rows(model, X, bg: BackgroundSet, target_class=None) -> list[Explanation]:
    """Explanations for many instances sharing one explained output."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check(model, X.shape[1], bg)
    f, target = _score_fn(model, target_class)
    v = coalition_values(f, X, bg.rows)
    phi = shapley_from_values(v, X.shape[1])
    return [Explanation(bg.features, X[i], phi[i], float(v[i, 0]), float(v[i, -1]), target)
            for i in range(X.shape[0])]


# --- global summaries ---------------------------------------------------------

@dataclass(frozen=True)
class GlobalSummary:
    features: tuple[str, ...]
    values: np.ndarray        # (n, d) feature values
    phi: np.ndarray           # (n, d)
    instances: np.ndarray     # instance ids
    base_value: float = 0.0
    target_output: object = None
    info: dict = field(default_factory=dict)

    @property
    def mean_abs_phi(self) -> np.ndarray:
        return np.mean(np.abs(self.phi), axis=0)

    @property
    def ranking(self) -> tuple[str, ...]:
        m = self.mean_abs_phi
        order = sorted(range(len(self.features)), key=lambda j: (-m[j], j))
        return tuple(self.features[j] for j in order)

    def importance(self) -> dict[str, float]:
        return {f: float(v) for f, v in zip(self.features, self.mean_abs_phi)}

    def as_dict(self) -> dict:
        return {"features": list(self.features), "mean_abs_phi": self.importance(),
                "ranking": list(self.ranking), "base_value": self.base_value,
                "target_output": None if self.target_output is None else str(self.target_output),
                "n_instances": int(self.phi.shape[0]), **self.info}


def global_summary(model, d, bg: BackgroundSet, split: str | None = None, target_class=None) -> GlobalSummary:
    """Explain every row of ``d`` (or of one split) against ``bg``.

    For classifiers the explained output defaults to the class predicted most
    often over those rows, so all instances share one score.
    """
    rows = d.rows(split) if split else d
    if rows.n_rows == 0:
        raise ExplainError("no rows to explain")
    if isinstance(model, RandomForest) and model.task == "classify" and target_class is None:
        pred = model.predict(rows.X)
        labels, counts = np.unique(pred, return_counts=True)
        target_class = labels[np.argmax(counts)]
    ex = explain_rows(model, rows.X, bg, target_class)
    ids = np.flatnonzero(d.split == split) if split else np.arange(d.n_rows)
    info = {"background": bg.describe()}
    return GlobalSummary(tuple(d.features), rows.X.copy(), np.array([e.phi for e in ex]), ids,
                         ex[0].base_value, ex[0].target_output, info)


# --- export -------------------------------------------------------------------

def write_beeswarm_csv(g: GlobalSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "value", "phi", "instance"])
        for i, inst in enumerate(g.instances):
            for j, name in enumerate(g.features):
                w.writerow([name, f"{g.values[i, j]:.17g}", f"{g.phi[i, j]:.17g}", int(inst)])


def read_beeswarm_csv(path) -> GlobalSummary:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r, None) != ["feature", "value", "phi", "instance"]:
            raise ExplainError(f"{path}: not a beeswarm CSV")
        recs = [(row[0], float(row[1]), float(row[2]), int(row[3])) for row in r if row]
    features = list(dict.fromkeys(rec[0] for rec in recs))
    instances = list(dict.fromkeys(rec[3] for rec in recs))
    fi = {f: j for j, f in enumerate(features)}
    ii = {k: i for i, k in enumerate(instances)}
    values = np.zeros((len(instances), len(features)))
    phi = np.zeros_like(values)
    for name, val, p, inst in recs:
        values[ii[inst], fi[name]] = val
        phi[ii[inst], fi[name]] = p
    return GlobalSummary(tuple(features), values, phi, np.array(instances))


def _jitter(feature: str, instance: int) -> float:
    return zlib.crc32(f"{feature}:{instance}".encode()) / 2.0 ** 32 - 0.5


def render_svg(g: GlobalSummary, title: str = "") -> str:
    """One strip per feature, ordered by mean |phi|; x = phi, colour = scaled value."""
    row_h, left, plot_w, top = 36, 170, 520, 40
    order = [g.features.index(f) for f in g.ranking]
    height = top + row_h * len(order) + 50
    width = left + plot_w + 30
    span = float(np.max(np.abs(g.phi))) if g.phi.size else 0.0
    span = span if span > 0 else 1.0

    def xpos(p):
        return left + (p / span + 1.0) * plot_w / 2.0

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{escape(title)}</text>')
    x0 = xpos(0.0)
    out.append(f'<line x1="{x0:.2f}" y1="{top - 6}" x2="{x0:.2f}" y2="{top + row_h * len(order)}" '
               'stroke="#888" stroke-width="1"/>')
    for r, j in enumerate(order):
        cy = top + row_h * r + row_h / 2
        out.append(f'<text x="{left - 8}" y="{cy + 4:.1f}" text-anchor="end">{escape(g.features[j])}</text>')
        col = g.values[:, j]
        lo, hi = float(np.min(col)), float(np.max(col))
        for i, inst in enumerate(g.instances):
            c = 0.5 if hi == lo else (col[i] - lo) / (hi - lo)
            fill = f"rgb({int(round(30 + 225 * c))},60,{int(round(255 - 225 * c))})"
            cyj = cy + _jitter(g.features[j], int(inst)) * row_h * 0.7
            out.append(f'<circle cx="{xpos(g.phi[i, j]):.2f}" cy="{cyj:.2f}" r="2.5" fill="{fill}" '
                       'fill-opacity="0.8"/>')
    axis_y = top + row_h * len(order) + 18
    out.append(f'<text x="{left}" y="{axis_y}" text-anchor="middle">{-span:.3g}</text>')
    out.append(f'<text x="{x0:.2f}" y="{axis_y}" text-anchor="middle">0</text>')
    out.append(f'<text x="{left + plot_w}" y="{axis_y}" text-anchor="middle">{span:.3g}</text>')
    out.append(f'<text x="{x0:.2f}" y="{axis_y + 18}" text-anchor="middle">'
               'Shapley value (blue: low feature value, red: high)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_beeswarm(g: GlobalSummary, path, format: str = "csv", title: str = "") -> None:
    if g.phi.size == 0:
        raise ExplainError("empty summary")
    if format == "csv":
        write_beeswarm_csv(g, path)
    elif format == "svg":
        Path(path).write_text(render_svg(g, title))
    else:
        raise ValueError(f"unknown format {format!r}")


def write_summary_json(g: GlobalSummary, path) -> None:
    Path(path).write_text(json.dumps(g.as_dict(), sort_keys=True, indent=2) + "\n")
