"""Random forest (CART trees) for variant classification and run-time regression."""

from __future__ import annotations

import json
import math
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

FORMAT = "xtune-forest"
VERSION = 1


class ModelFormatError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    max_depth: int = 0                  # 0 means unbounded
    min_samples_leaf: int = 1
    features_per_split: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")

    def n_candidates(self, d: int, task: str) -> int:
        if self.features_per_split:
            return max(1, min(d, int(self.features_per_split)))
        if task == "classify":
            return max(1, int(math.sqrt(d)))
        return max(1, d // 3)


@dataclass
class DecisionTree:
    feature: np.ndarray       # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray         # leaf output (mean target, or majority class index)
    counts: np.ndarray | None = None   # per-leaf class histogram

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        # children always follow their parent in node order
        level = np.zeros(self.n_nodes, dtype=np.int64)
        for i in np.flatnonzero(self.feature >= 0):
            level[self.left[i]] = level[self.right[i]] = level[i] + 1
        return int(level.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            live = f >= 0
            if not live.any():
                return node
            ni = node[live]
            go_left = X[rows[live], f[live]] <= self.threshold[ni]
            node[live] = np.where(go_left, self.left[ni], self.right[ni])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_record(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            rec = {"value": float(self.value[node])}
            if self.counts is not None:
                rec["counts"] = [int(c) for c in self.counts[node]]
            return rec
        return {"feature": int(self.feature[node]), "threshold": float(self.threshold[node]),
                "left": self.to_record(int(self.left[node])),
                "right": self.to_record(int(self.right[node]))}

    @classmethod
    def from_record(cls, rec: dict, n_classes: int | None) -> "DecisionTree":
        feat, thr, left, right, val, counts = [], [], [], [], [], []

        def new_node():
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            val.append(0.0)
            counts.append([0] * (n_classes or 0))
            return len(feat) - 1

        # same numbering as training: both children are allocated, then the left subtree
        def visit(r, i):
            if "feature" in r:
                feat[i] = int(r["feature"])
                thr[i] = float(r["threshold"])
                left[i] = new_node()
                right[i] = new_node()
                visit(r["left"], left[i])
                visit(r["right"], right[i])
            else:
                val[i] = float(r["value"])
                if n_classes:
                    counts[i] = [int(c) for c in r["counts"]]

        visit(rec, new_node())
        return cls(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                   np.array(right, dtype=np.int64), np.array(val),
                   np.array(counts, dtype=np.int64) if n_classes else None)


@dataclass
class RandomForest:
    task: str                          # classify | regress
    features: tuple[str, ...]
    trees: list[DecisionTree]
    config: TrainConfig
    classes: np.ndarray | None = None  # sorted labels (classification)
    target: str = "target"
    y_range: tuple[float, float] = (0.0, 0.0)
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, dict):
            missing = [f for f in self.features if f not in X]
            if missing:
                raise SchemaMismatch(f"feature vector lacks {missing}")
            return np.array([[float(X[f]) for f in self.features]])
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_scores(self, X) -> np.ndarray:
        """Fraction of trees voting for each class, shape (n, n_classes)."""
        if self.task != "classify":
            raise ValueError("class scores exist only for classifiers")
        X = self._matrix(X)
        votes = np.zeros((X.shape[0], len(self.classes)))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, tree.predict(X).astype(np.int64)] += 1.0
        return votes / len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = self._matrix(X)
        if self.task == "classify":
            # argmax picks the first maximum, i.e. the lowest label on ties
            return self.classes[np.argmax(self.predict_scores(X), axis=1)]
        out = np.zeros(X.shape[0])
        lo = np.full(X.shape[0], np.inf)
        hi = np.full(X.shape[0], -np.inf)
        for tree in self.trees:
            p = tree.predict(X)
            out += p
            np.minimum(lo, p, out=lo)
            np.maximum(hi, p, out=hi)
        # the mean lies between the extreme tree outputs; clip away rounding
        return np.clip(out / len(self.trees), lo, hi)

    def score_function(self, target_class=None):
        """Real-valued model output used for explanations."""
        if self.task == "regress":
            return self.predict
        k = int(np.flatnonzero(self.classes == target_class)[0])
        return lambda X: self.predict_scores(X)[:, k]

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out


# --- training -----------------------------------------------------------------

def _best_split(Xn, yn, feats, task, n_classes, msl):
    n = yn.shape[0]
    best = None   # (score, feature, threshold, ...)
    if task == "regress":
        mean = math.fsum(yn) / n
    for f in feats:
        x = Xn[:, f]
        order = np.lexsort((yn, x))
        xs, ys = x[order], yn[order]
        pos = np.arange(msl - 1, n - msl)
        if pos.size == 0:
            return None
        pos = pos[xs[pos] < xs[pos + 1]]
        if pos.size == 0:
            continue
        nl = (pos + 1).astype(np.float64)
        nr = n - nl
        if task == "classify":
            cum = np.cumsum(np.eye(n_classes, dtype=np.int64)[ys], axis=0)
            L = cum[pos].astype(np.float64)
            R = cum[-1].astype(np.float64) - L
            score = (nl - (L * L).sum(axis=1) / nl) + (nr - (R * R).sum(axis=1) / nr)
        else:
            c = ys - mean
            s1 = np.cumsum(c)
            s2 = np.cumsum(c * c)
            l1, l2 = s1[pos], s2[pos]
            r1, r2 = s1[-1] - l1, s2[-1] - l2
            score = (l2 - l1 * l1 / nl) + (r2 - r1 * r1 / nr)
        k = int(np.argmin(score))
        if best is None or score[k] < best[0]:
            i = pos[k]
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not thr < xs[i + 1]:
                thr = xs[i]
            best = (float(score[k]), int(f), float(thr))
    return best


def _grow_tree(X, y, idx, task, n_classes, cfg: TrainConfig, rng) -> DecisionTree:
    d = X.shape[1]
    k = cfg.n_candidates(d, task)
    feat, thr, left, right, val, counts = [], [], [], [], [], []

    def new_node():
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(0.0)
        counts.append(None)
        return len(feat) - 1

    root = new_node()
    stack = [(root, idx, 0)]
    while stack:
        node, rows, depth = stack.pop()
        yn = y[rows]
        n = rows.shape[0]
        if task == "classify":
            hist = np.bincount(yn, minlength=n_classes)
            counts[node] = hist
            val[node] = float(np.argmax(hist))
            pure = np.count_nonzero(hist) <= 1
        else:
            val[node] = math.fsum(yn) / n
            pure = bool(np.all(yn == yn[0]))
        if pure or n < 2 * cfg.min_samples_leaf or (cfg.max_depth and depth >= cfg.max_depth):
            continue
        chosen = np.sort(rng.choice(d, size=k, replace=False)) if k < d else np.arange(d)
        Xn = X[rows]
        split = _best_split(Xn, yn, chosen, task, n_classes, cfg.min_samples_leaf)
        if split is None and k < d:
            rest = np.setdiff1d(np.arange(d), chosen)
            split = _best_split(Xn, yn, rest, task, n_classes, cfg.min_samples_leaf)
        if split is None:
            continue
        _, f, t = split
        go_left = Xn[:, f] <= t
        feat[node], thr[node] = f, t
        # only leaves carry outputs
        val[node] = 0.0
        counts[node] = None
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], rows[~go_left], depth + 1))
        stack.append((left[node], rows[go_left], depth + 1))
    cnt = None
    if task == "classify":
        cnt = np.array([c if c is not None else np.zeros(n_classes, dtype=np.int64) for c in counts],
                       dtype=np.int64)
    return DecisionTree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                        np.array(right, dtype=np.int64), np.array(val), cnt)


def fit(X, y, features, task: str, cfg: TrainConfig | None = None, target: str = "target") -> RandomForest:
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if X.ndim != 2 or X.shape[1] != len(features) or y.shape[0] != X.shape[0]:
        raise SchemaMismatch("feature matrix, labels and schema disagree")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if task not in ("classify", "regress"):
        raise ValueError(f"unknown task {task!r}")
    classes = None
    if task == "classify":
        classes, yk = np.unique(y, return_inverse=True)
        if np.array_equal(classes, np.round(classes)):
            classes = classes.astype(np.int64)
        n_classes = len(classes)
    else:
        yk = y.astype(np.float64)
        n_classes = 0
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    n = X.shape[0]
    for ss in seeds:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(_grow_tree(X, yk, idx, task, n_classes, cfg, rng))
    y_range = (float(np.min(yk)), float(np.max(yk))) if task == "regress" else (0.0, 0.0)
    return RandomForest(task, tuple(features), trees, cfg, classes, target, y_range)


def train(dataset, cfg: TrainConfig | None = None, split: str | None = "train") -> RandomForest:
    """Fit a forest on the rows of ``dataset`` tagged ``split`` (all rows if None)."""
    d = dataset.rows(split) if split else dataset
    model = fit(d.X, d.y, d.features, d.task, cfg, d.target)
    model.meta["dataset_manifest"] = dataset.manifest_hash
    return model


def predict(model: RandomForest, x):
    out = model.predict(x)
    return out[0] if isinstance(x, dict) else out


# --- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    n: int
    accuracy: float | None = None
    confusion: dict | None = None
    mape: float | None = None
    max_relative_error: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate(model: RandomForest, dataset, split: str | None = "test") -> EvalReport:
    d = dataset.rows(split) if split else dataset
    if d.n_rows == 0:
        raise ValueError("empty evaluation set")
    if tuple(d.features) != model.features:
        raise SchemaMismatch(f"model features {model.features} != dataset features {tuple(d.features)}")
    pred = model.predict(d.X)
    if model.task == "classify":
        truth = d.y.astype(model.classes.dtype)
        conf: dict[str, dict[str, int]] = {}
        for t, p in zip(truth.tolist(), pred.tolist()):
            row = conf.setdefault(str(t), {})
            row[str(p)] = row.get(str(p), 0) + 1
        return EvalReport(d.n_rows, accuracy=float(np.mean(pred == truth)), confusion=conf)
    rel = np.abs(pred - d.y) / np.abs(d.y)
    return EvalReport(d.n_rows, mape=float(np.mean(rel)), max_relative_error=float(np.max(rel)))


# --- persistence --------------------------------------------------------------

@contextmanager
def _nesting_room(depth: int):
    # nested records recurse once per level in both our walkers and the json module
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 4 * depth + 1000))
    try:
        yield
    finally:
        sys.setrecursionlimit(old)


def model_to_json(model: RandomForest) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "task": model.task,
        "target": model.target,
        "features": list(model.features),
        "classes": None if model.classes is None else model.classes.tolist(),
        "config": asdict(model.config),
        "y_range": list(model.y_range),
        "meta": model.meta,
        "trees": [],
    }
    with _nesting_room(max(t.depth for t in model.trees)):
        doc["trees"] = [t.to_record() for t in model.trees]
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def model_from_json(text: str) -> RandomForest:
    with _nesting_room(text.count("{")):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
        return _model_from_doc(doc)


def _model_from_doc(doc) -> RandomForest:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("not an xtune forest file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')}")
    try:
        classes = None if doc["classes"] is None else np.array(doc["classes"])
        n_classes = None if classes is None else len(classes)
        trees = [DecisionTree.from_record(r, n_classes) for r in doc["trees"]]
        return RandomForest(doc["task"], tuple(doc["features"]), trees, TrainConfig(**doc["config"]),
                            classes, doc["target"], tuple(doc["y_range"]), doc.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None


def model_save(model: RandomForest, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model))


def model_load(path) -> RandomForest:
    with open(path) as fh:
        return model_from_json(fh.read())
