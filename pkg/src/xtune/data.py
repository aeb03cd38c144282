"""Benchmark harness, feature extraction and labeled dataset construction."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import statistics
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .kernels import EXECUTABLE, BlockConfig, UnsupportedVariant, run_variant, variant
from .matrices import as_dense, gen_identity_mix, gen_random_scaled, sparsity
from .ozaki import COL_SPLIT, ROW_SPLIT, SplitConfig, count_splits, split_matrix
from .piccg import BreakdownError, IcParams, p3d_generate, piccg_solve

MATMUL_FEATURES = ("size", "sparsity_A", "max_A", "min_A",
                   "sparse_splits_A", "dense_splits_A", "splits_B")
BLOCKWIDTH_FEATURES = ("sparsity_A", "block_width", "splits_B")
PICCG_FEATURES = ("matrix_order", "log10_lambda_ratio", "fill_level", "threshold")

TRAIN, TEST, EXCLUDED = "train", "test", "excluded"
FORMAT_TAG = "xtune-dataset 1"

# per-size totals reported for the published PICCG sweep
REPORTED_PICCG_TRAIN = 41073
REPORTED_PICCG_TEST = 10269


class DatasetError(ValueError):
    pass


class SchemaError(DatasetError):
    pass


class ManifestMismatch(DatasetError):
    pass


class VariantMismatchError(RuntimeError):
    """Two variants disagreed on the accurate product; timings are meaningless."""


# --- dataset container --------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def manifest_digest(manifest: dict) -> str:
    return hashlib.sha256(_canonical(manifest).encode()).hexdigest()


@dataclass
class Dataset:
    features: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    task: str                    # classify | regress
    target: str
    split: np.ndarray            # TRAIN / TEST / EXCLUDED per row
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = tuple(self.features)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, len(self.features))
        self.y = np.asarray(self.y, dtype=np.float64)
        self.split = np.asarray(self.split, dtype=object)
        self.extra = {k: np.asarray(v, dtype=np.float64) for k, v in self.extra.items()}
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.split.shape != (n,):
            raise SchemaError("feature, target and split columns differ in length")
        for k, v in self.extra.items():
            if v.shape != (n,):
                raise SchemaError(f"metadata column {k!r} has the wrong length")
        names = list(self.features) + [self.target, "split"] + list(self.extra)
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def manifest_hash(self) -> str:
        return manifest_digest(self.manifest)

    def column(self, name: str) -> np.ndarray:
        if name in self.features:
            return self.X[:, self.features.index(name)]
        if name == self.target:
            return self.y
        if name in self.extra:
            return self.extra[name]
        raise KeyError(name)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.features, self.X[mask], self.y[mask], self.task, self.target,
                       self.split[mask], {k: v[mask] for k, v in self.extra.items()}, self.manifest)

    def rows(self, split: str) -> "Dataset":
        return self.subset(self.split == split)

    def feature_vector(self, i: int) -> dict[str, float]:
        return {f: float(v) for f, v in zip(self.features, self.X[i])}

    def validate(self) -> None:
        if not np.all(np.isfinite(self.X)):
            raise DatasetError("features contain NaN or infinity")
        if self.task == "classify":
            bad = set(self.y.astype(int).tolist()) - set(EXECUTABLE)
            if bad or not np.array_equal(self.y, np.round(self.y)):
                raise DatasetError(f"labels outside the executable variant set: {sorted(bad)}")
        elif self.task == "regress":
            if not np.all(self.y > 0):
                raise DatasetError("regression targets must be positive")
        else:
            raise DatasetError(f"unknown task {self.task!r}")
        unknown = set(self.split.tolist()) - {TRAIN, TEST, EXCLUDED}
        if unknown:
            raise DatasetError(f"unknown split tags {unknown}")

    def equals(self, other: "Dataset") -> bool:
        return (self.features == other.features and self.task == other.task
                and self.target == other.target and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y) and list(self.split) == list(other.split)
                and self.extra.keys() == other.extra.keys()
                and all(np.array_equal(v, other.extra[k], equal_nan=True) for k, v in self.extra.items())
                and self.manifest == other.manifest)


def assign_split(n_rows: int, test_fraction: float, seed: int) -> np.ndarray:
    """Tag ``round(n_rows * test_fraction)`` rows as test via a seeded shuffle."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    tags = np.full(n_rows, TRAIN, dtype=object)
    n_test = int(round(n_rows * test_fraction))
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n_rows)
    tags[perm[:n_test]] = TEST
    return tags


def host_descriptor() -> dict:
    return {"machine": platform.machine(), "system": platform.system(),
            "python": platform.python_version(), "numpy": np.__version__,
            "cpus": os.cpu_count()}


# --- one-hot encoding ---------------------------------------------------------

def one_hot_encode(d: Dataset, column: str, prefix: str | None = None, levels=None,
                   max_levels: int = 16) -> Dataset:
    """Replace an integer feature by one 0/1 indicator column per level.

    ``levels`` defaults to the values observed in the column.
    """
    if column not in d.features:
        raise SchemaError(f"no feature named {column!r}")
    vals = d.column(column)
    if not np.array_equal(vals, np.round(vals)):
        raise DatasetError(f"{column!r} is not integer-valued")
    levels = np.unique(vals) if levels is None else np.asarray(sorted(levels), dtype=np.float64)
    if not np.all(np.isin(vals, levels)):
        raise DatasetError(f"{column!r} holds values outside the levels {levels.tolist()}")
    if levels.size > max_levels:
        raise DatasetError(f"{column!r} has {levels.size} levels; not categorical")
    prefix = column + "_" if prefix is None else prefix
    names = [f"{prefix}{int(v)}" for v in levels]
    j = d.features.index(column)
    ind = (vals[:, None] == levels[None, :]).astype(np.float64)
    X = np.hstack([d.X[:, :j], ind, d.X[:, j + 1:]])
    features = d.features[:j] + tuple(names) + d.features[j + 1:]
    manifest = dict(d.manifest)
    manifest["one_hot"] = list(manifest.get("one_hot", [])) + [
        {"column": column, "levels": [int(v) for v in levels], "names": names}]
    return Dataset(features, X, d.y, d.task, d.target, d.split, d.extra, manifest)


def one_hot_decode(d: Dataset, column: str) -> Dataset:
    """Inverse of :func:`one_hot_encode` for the most recent encoding of ``column``."""
    records = [r for r in d.manifest.get("one_hot", []) if r["column"] == column]
    if not records:
        raise SchemaError(f"{column!r} was never one-hot encoded")
    rec = records[-1]
    idx = [d.features.index(n) for n in rec["names"]]
    ind = d.X[:, idx]
    if not np.all(ind.sum(axis=1) == 1):
        raise DatasetError("indicator columns are not exclusive and exhaustive")
    vals = np.asarray(rec["levels"], dtype=np.float64)[np.argmax(ind, axis=1)]
    j = idx[0]
    keep = [i for i in range(len(d.features)) if i not in idx]
    X = np.insert(d.X[:, keep], j, vals, axis=1)
    features = list(np.delete(np.array(d.features, dtype=object), idx))
    features.insert(j, column)
    manifest = dict(d.manifest)
    manifest["one_hot"] = [r for r in manifest["one_hot"] if r is not rec]
    if not manifest["one_hot"]:
        del manifest["one_hot"]
    return Dataset(tuple(features), X, d.y, d.task, d.target, d.split, d.extra, manifest)


# --- CSV persistence ----------------------------------------------------------

def manifest_path(path) -> Path:
    """Sidecar JSON manifest next to a dataset CSV."""
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def dataset_write_csv(d: Dataset, path) -> None:
    """Write rows as 17-significant-digit decimals plus a manifest sidecar."""
    schema = {"task": d.task, "target": d.target, "features": list(d.features),
              "extra": list(d.extra)}
    buf = io.StringIO()
    buf.write(f"# {FORMAT_TAG}\n")
    buf.write(f"# schema {_canonical(schema)}\n")
    buf.write(f"# manifest {_canonical(d.manifest)}\n")
    buf.write(f"# manifest-sha256 {d.manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(d.features) + [d.target, "split"] + list(d.extra))
    cols = [d.X[:, j] for j in range(len(d.features))] + [d.y]
    extras = list(d.extra.values())
    fmt = "{:.17g}".format
    for i in range(d.n_rows):
        w.writerow([fmt(c[i]) for c in cols] + [d.split[i]] + [fmt(c[i]) for c in extras])
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)
    manifest_path(path).write_text(json.dumps(d.manifest, sort_keys=True, indent=2) + "\n")


def dataset_read_csv(path) -> Dataset:
    text = Path(path).read_text()
    lines = text.split("\n")
    meta = {}
    body_start = 0
    for body_start, line in enumerate(lines):
        if not line.startswith("#"):
            break
        key, _, value = line[2:].partition(" ")
        meta[key] = value
    if meta.get("xtune-dataset") != FORMAT_TAG.split(" ", 1)[1]:
        raise SchemaError(f"{path}: missing '{FORMAT_TAG}' header")
    try:
        schema = json.loads(meta["schema"])
        manifest = json.loads(meta["manifest"])
        digest = meta["manifest-sha256"]
    except (KeyError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: bad header ({exc})") from None
    if manifest_digest(manifest) != digest:
        raise ManifestMismatch(f"{path}: embedded manifest does not match its hash")
    side = manifest_path(path)
    if side.exists() and manifest_digest(json.loads(side.read_text())) != digest:
        raise ManifestMismatch(f"{side}: manifest differs from the one embedded in {path}")

    reader = csv.reader(lines[body_start:])
    header = next(reader, None)
    expected = schema["features"] + [schema["target"], "split"] + schema["extra"]
    if header != expected:
        missing = [c for c in expected if c not in (header or [])]
        raise SchemaError(f"{path}: columns {header} do not match schema"
                          + (f" (missing {missing})" if missing else ""))
    nf = len(schema["features"])
    ncol = len(expected)
    num, tags = [], []
    for lineno, row in enumerate(reader, start=body_start + 2):
        if not row:
            continue
        if len(row) != ncol:
            raise DatasetError(f"{path}:{lineno}: expected {ncol} fields, got {len(row)}")
        try:
            num.append([float(v) for v in row[:nf + 1]] + [float(v) for v in row[nf + 2:]])
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        tags.append(row[nf + 1])
    arr = np.array(num, dtype=np.float64).reshape(len(num), ncol - 1)
    extra = {k: arr[:, nf + 1 + i] for i, k in enumerate(schema["extra"])}
    return Dataset(tuple(schema["features"]), arr[:, :nf], arr[:, nf], schema["task"],
                   schema["target"], np.array(tags, dtype=object), extra, manifest)


# --- matmul features and benchmarking -----------------------------------------

def extract_matmul_features(a, b, cfg: SplitConfig | None = None) -> dict[str, float]:
    a = as_dense(a)
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    sa = split_matrix(a, ROW_SPLIT, cfg)
    sb = split_matrix(b, COL_SPLIT, cfg, inner_dim=a.shape[1])
    sp, dn, _ = count_splits(sa)
    return {"size": float(a.shape[0]), "sparsity_A": sparsity(a),
            "max_A": float(np.abs(a).max()) if a.size else 0.0,
            "min_A": float(a.min()) if a.size else 0.0,
            "sparse_splits_A": float(sp), "dense_splits_A": float(dn),
            "splits_B": float(len(sb))}


@dataclass(frozen=True)
class BenchmarkConfig:
    repeats: int = 5
    warmup: int = 1
    threads: int = 1
    variants: tuple[int, ...] = EXECUTABLE
    block_width: int | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if not any(variant(v).executable for v in self.variants):
            raise UnsupportedVariant("benchmark needs at least one executable variant")


@dataclass(frozen=True)
class BenchmarkResult:
    timings: dict[int, float]     # median seconds per variant
    best: int
    result: np.ndarray


def best_variant(timings: dict[int, float]) -> int:
    """Fastest variant; equal times go to the lowest id."""
    return min(timings, key=lambda v: (timings[v], v))


def interleaved_medians(jobs, warmup: int, repeats: int, progress=None):
    """Median ``elapsed_seconds`` per job, cycling through all jobs on each repeat.

    Cycling spreads slow drift in machine speed evenly over the jobs instead of
    penalising whichever ran during a slow stretch.  Returns the medians and the
    last run of each job.
    """
    last = [None] * len(jobs)
    for _ in range(warmup):
        for j, job in enumerate(jobs):
            last[j] = job()
    times = [[] for _ in jobs]
    for r in range(repeats):
        for j, job in enumerate(jobs):
            last[j] = job()
            times[j].append(last[j].elapsed_seconds)
            if progress:
                progress(r * len(jobs) + j + 1, repeats * len(jobs))
    return [statistics.median(t) for t in times], last


def benchmark_variants(a, b, cfg: BenchmarkConfig | None = None,
                       split_cfg: SplitConfig | None = None) -> BenchmarkResult:
    """Time each executable variant on ``a @ b`` and pick the fastest.

    Every variant's product is checked bitwise against the first before any
    timing is accepted.
    """
    cfg = cfg or BenchmarkConfig()
    a = as_dense(a)
    b = as_dense(b)
    sa = split_matrix(a, ROW_SPLIT, split_cfg)
    sb = split_matrix(b, COL_SPLIT, split_cfg, inner_dim=a.shape[1])
    blk = BlockConfig(cfg.block_width) if cfg.block_width else None
    ids = [int(v) for v in cfg.variants if variant(v).executable]
    jobs = [lambda v=v: run_variant(v, sa, sb, blk, cfg.threads) for v in ids]
    medians, runs = interleaved_medians(jobs, cfg.warmup, cfg.repeats)
    reference = runs[0].result
    for v, run in zip(ids[1:], runs[1:]):
        if not np.array_equal(reference, run.result):
            raise VariantMismatchError(f"variant {v} disagrees with variant {ids[0]}")
    timings = dict(zip(ids, medians))
    return BenchmarkResult(timings, best_variant(timings), reference)


# --- matmul selection dataset -------------------------------------------------

@dataclass(frozen=True)
class MatmulCell:
    generator: int          # 1: scaled random, 2: identity mix
    size: int
    sparsity: float
    phi: int = 30           # unused by generator 2
    b_cols: int | None = None


def desk_matmul_grid() -> tuple[MatmulCell, ...]:
    sizes = (64, 96, 128, 160, 192)
    cells = [MatmulCell(1, n, s, 30) for n in sizes for s in (0.0, 0.3, 0.6, 0.9)]
    cells += [MatmulCell(2, n, s) for n in sizes for s in (0.90, 0.92, 0.95, 0.98)]
    return tuple(cells)


def paper_matmul_grid() -> tuple[MatmulCell, ...]:
    sizes = (1000, 1500, 2000, 2500, 3000)
    cells = [MatmulCell(1, n, s, phi) for n in sizes for phi in (10, 20, 30) for s in (0.0, 0.5, 0.9)]
    cells += [MatmulCell(2, n, s) for n in sizes for s in (0.90, 0.92, 0.94, 0.96, 0.98)]
    cells += [MatmulCell(1, n, s, 30, 4000) for n in sizes for s in (0.0, 0.9)]
    cells.append(MatmulCell(2, 3000, 0.98, b_cols=4000))
    return tuple(cells)


def cell_seeds(seed: int, index: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence([seed, index]).generate_state(2)
    return int(a), int(b)


def make_pair(cell: MatmulCell, seed_a: int, seed_b: int) -> tuple[np.ndarray, np.ndarray]:
    if cell.generator == 1:
        a = gen_random_scaled(cell.size, cell.sparsity, cell.phi, seed_a)
        b = gen_random_scaled(cell.size, cell.sparsity, cell.phi, seed_b, cols=cell.b_cols)
    elif cell.generator == 2:
        a = gen_identity_mix(cell.size, cell.sparsity, seed_a)
        b = gen_identity_mix(cell.size, cell.sparsity, seed_b, cols=cell.b_cols)
    else:
        raise ValueError(f"unknown generator {cell.generator}")
    return a, b


@dataclass(frozen=True)
class DatasetPlan:
    kind: str
    cells: tuple
    manifest: dict
    split: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    def split_counts(self) -> dict[str, int]:
        return {t: int(np.sum(self.split == t)) for t in (TRAIN, TEST)}


def plan_matmul(cells=None, seed: int = 0, test_fraction: float = 0.16,
                split_cfg: SplitConfig | None = None, bench: BenchmarkConfig | None = None,
                scale: str = "desk") -> DatasetPlan:
    cells = tuple(desk_matmul_grid() if cells is None else cells)
    if not cells:
        raise ValueError("empty grid")
    manifest = {
        "kind": "matmul-select", "scale": scale, "seed": seed, "test_fraction": test_fraction,
        "features": list(MATMUL_FEATURES), "target": "label",
        "grid": [asdict(c) for c in cells],
        "split_config": asdict(split_cfg or SplitConfig()),
        "benchmark": {k: list(v) if isinstance(v, tuple) else v
                      for k, v in asdict(bench or BenchmarkConfig()).items()},
        "generators": {"1": "uniform(0,1) * 10**k, k uniform in [0, phi), zeros by permutation",
                       "2": "identity plus uniform(0,1) off-diagonal entries"},
        "host": host_descriptor(),
    }
    return DatasetPlan("matmul-select", cells, manifest, assign_split(len(cells), test_fraction, seed))


def build_matmul_dataset(plan: DatasetPlan | None = None, progress=None) -> Dataset:
    plan = plan or plan_matmul()
    m = plan.manifest
    split_cfg = SplitConfig(**m["split_config"])
    bench = BenchmarkConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in m["benchmark"].items()})
    rows, labels, extra = [], [], {"generator": [], "phi": [], "b_cols": [], "seed_a": [], "seed_b": []}
    extra.update({f"time_v{v}": [] for v in bench.variants if variant(v).executable})
    for i, cell in enumerate(plan.cells):
        sa, sb = cell_seeds(m["seed"], i)
        a, b = make_pair(cell, sa, sb)
        feats = extract_matmul_features(a, b, split_cfg)
        res = benchmark_variants(a, b, bench, split_cfg)
        rows.append([feats[f] for f in MATMUL_FEATURES])
        labels.append(res.best)
        extra["generator"].append(cell.generator)
        extra["phi"].append(cell.phi)
        extra["b_cols"].append(b.shape[1])
        extra["seed_a"].append(sa)
        extra["seed_b"].append(sb)
        for v, t in res.timings.items():
            extra[f"time_v{v}"].append(t)
        if progress:
            progress(i + 1, len(plan.cells))
    d = Dataset(MATMUL_FEATURES, rows, labels, "classify", "label", plan.split, extra, m)
    d.validate()
    return d


def engineered_selection_dataset(n_rows: int = 60, seed: int = 0, test_fraction: float = 0.25) -> Dataset:
    """Selection data whose label is decided by the sparsity of A alone.

    Matrices are real generator output so every feature is genuine; only the
    label is assigned by rule: variant 1 (dense GEMM) below sparsity 0.5,
    variant 4 (CRS multi-RHS SpMV) above.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    rows, labels, seeds = [], [], []
    for i in range(n_rows):
        sa, sb = cell_seeds(seed, i)
        n = int(rng.integers(24, 72))
        if i % 3 == 2:
            cell = MatmulCell(2, n, float(rng.uniform(0.90, 0.98)))
        else:
            s = float(rng.choice([rng.uniform(0.0, 0.35), rng.uniform(0.65, 0.98)]))
            cell = MatmulCell(1, n, s, int(rng.integers(1, 31)))
        a, b = make_pair(cell, sa, sb)
        feats = extract_matmul_features(a, b)
        rows.append([feats[f] for f in MATMUL_FEATURES])
        labels.append(1 if feats["sparsity_A"] < 0.5 else 4)
        seeds.append(sa)
    manifest = {"kind": "matmul-select-engineered", "seed": seed, "n_rows": n_rows,
                "test_fraction": test_fraction, "label_rule": "sparsity_A < 0.5 -> 1 else 4"}
    d = Dataset(MATMUL_FEATURES, rows, labels, "classify", "label",
                assign_split(n_rows, test_fraction, seed), {"seed_a": seeds}, manifest)
    d.validate()
    return d


# --- block width dataset ------------------------------------------------------

BLOCKED_VARIANT = 5


def paper_blockwidths(n: int = 1500, count: int = 48) -> tuple[int, ...]:
    return tuple(int(round(i * n / count)) for i in range(1, count + 1))


def plan_blockwidth(n: int = 160, widths=(8, 16, 32, 64, 128, 160), sparsities=(0.0, 0.3, 0.6, 0.9),
                    phis=(10, 30), seed: int = 0, test_fraction: float = 0.16,
                    bench: BenchmarkConfig | None = None, scale: str = "desk") -> DatasetPlan:
    widths = tuple(int(w) for w in widths)
    if not widths:
        raise ValueError("widths must be nonempty")
    for w in widths:
        BlockConfig(w).check(n)
    cells = tuple((s, phi, w) for s in sparsities for phi in phis for w in widths)
    bench = bench or BenchmarkConfig(variants=(BLOCKED_VARIANT,))
    manifest = {
        "kind": "blockwidth", "scale": scale, "seed": seed, "n": n, "widths": list(widths),
        "sparsities": list(sparsities), "phis": list(phis), "test_fraction": test_fraction,
        "features": list(BLOCKWIDTH_FEATURES), "target": "seconds", "variant": BLOCKED_VARIANT,
        # every slice with any zero goes through the blocked sparse kernel
        "split_config": asdict(SplitConfig(sparse_threshold=0.0)),
        "benchmark": {"repeats": bench.repeats, "warmup": bench.warmup, "threads": bench.threads},
        "host": host_descriptor(),
    }
    return DatasetPlan("blockwidth", cells, manifest, assign_split(len(cells), test_fraction, seed))


def build_blockwidth_dataset(plan: DatasetPlan | None = None, progress=None) -> Dataset:
    plan = plan or plan_blockwidth()
    m = plan.manifest
    split_cfg = SplitConfig(**m["split_config"])
    bench = m["benchmark"]
    n = m["n"]
    cache = {}
    for s, phi, _ in plan.cells:
        if (s, phi) not in cache:
            sa_seed, sb_seed = cell_seeds(m["seed"], len(cache))
            a = gen_random_scaled(n, s, phi, sa_seed)
            b = gen_random_scaled(n, 0.0, phi, sb_seed)
            sa = split_matrix(a, ROW_SPLIT, split_cfg)
            sb = split_matrix(b, COL_SPLIT, split_cfg, inner_dim=n)
            cache[(s, phi)] = (sparsity(a), sa, sb)
    jobs = [lambda c=cache[(s, phi)], w=w: run_variant(BLOCKED_VARIANT, c[1], c[2], BlockConfig(w),
                                                       bench["threads"])
            for s, phi, w in plan.cells]
    medians, _ = interleaved_medians(jobs, bench["warmup"], bench["repeats"], progress)
    rows = [[cache[(s, phi)][0], float(w), float(len(cache[(s, phi)][2]))] for s, phi, w in plan.cells]
    phis = [phi for _, phi, _ in plan.cells]
    d = Dataset(BLOCKWIDTH_FEATURES, rows, medians, "regress", "seconds", plan.split, {"phi": phis}, m)
    d.validate()
    return d


# --- PICCG dataset ------------------------------------------------------------

def full_threshold_grid() -> tuple[float, ...]:
    """0.0001 .. 0.0199 in steps of 0.0001 (199 points)."""
    return tuple(round(i * 1e-4, 10) for i in range(1, 200))


def paper_lambda2() -> tuple[float, ...]:
    """90 conductivities 10**(-k/10), k = 0..89."""
    return tuple(10.0 ** (-k / 10) for k in range(90))


def desk_lambda2() -> tuple[float, ...]:
    return paper_lambda2()[::9]


def desk_thresholds() -> tuple[float, ...]:
    return full_threshold_grid()[::10]


@dataclass(frozen=True)
class PiccgSweep:
    grids: tuple[int, ...] = (16,)
    lambda2: tuple[float, ...] = field(default_factory=desk_lambda2)
    levels: tuple[int, ...] = (0, 1, 2)
    thresholds: tuple[float, ...] = field(default_factory=desk_thresholds)
    lambda1: float = 1.0
    tol: float = 1e-8
    max_iter: int = 10000
    repeats: int = 5
    warmup: int = 1

    @classmethod
    def paper(cls) -> "PiccgSweep":
        return cls(grids=(16, 32, 64), lambda2=paper_lambda2(), thresholds=full_threshold_grid())

    def __post_init__(self):
        if not (self.grids and self.lambda2 and self.levels and self.thresholds):
            raise ValueError("every sweep dimension needs at least one value")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    def rows_per_grid(self) -> int:
        return len(self.lambda2) * len(self.levels) * len(self.thresholds)


def plan_piccg(sweep: PiccgSweep | None = None, seed: int = 0, test_fraction: float = 0.2,
               scale: str = "desk") -> DatasetPlan:
    sweep = sweep or PiccgSweep()
    cells = tuple((g, lam, m, t) for g in sweep.grids for lam in sweep.lambda2
                  for m in sweep.levels for t in sweep.thresholds)
    per = sweep.rows_per_grid()
    reported = REPORTED_PICCG_TRAIN + REPORTED_PICCG_TEST
    warn = []
    if per not in (REPORTED_PICCG_TRAIN, reported):
        warn.append(f"configured sweep gives {len(sweep.lambda2)} x {len(sweep.levels)} x "
                    f"{len(sweep.thresholds)} = {per} rows per grid; the reported per-size counts are "
                    f"{REPORTED_PICCG_TRAIN} train + {REPORTED_PICCG_TEST} test = {reported}; "
                    "neither figure is forced")
    manifest = {
        "kind": "piccg", "scale": scale, "seed": seed, "test_fraction": test_fraction,
        "features": list(PICCG_FEATURES), "target": "seconds",
        "sweep": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(sweep).items()},
        "rows_per_grid": per,
        "reported_rows_per_grid": {"train": REPORTED_PICCG_TRAIN, "test": REPORTED_PICCG_TEST},
        "warnings": warn,
        "host": host_descriptor(),
    }
    return DatasetPlan("piccg", cells, manifest, assign_split(len(cells), test_fraction, seed))


def build_piccg_dataset(plan: DatasetPlan | None = None, progress=None) -> Dataset:
    """One row per (grid, lambda2, m, t); target is the median solve wall time.

    Repeats are taken as full passes over the sweep, so slow drift in machine
    speed shifts every cell alike instead of a contiguous stretch of cells.
    Rows whose factorization breaks down or whose solve misses the tolerance
    are kept with ``converged = 0`` and tagged ``excluded``.
    """
    plan = plan or plan_piccg()
    m = plan.manifest
    for w in m["warnings"]:
        warnings.warn(w, stacklevel=2)
    sw = m["sweep"]
    problems = {}
    for g, lam, _, _ in plan.cells:
        if (g, lam) not in problems:
            problems[(g, lam)] = p3d_generate(g, sw["lambda1"], lam)

    def solve(cell):
        g, lam, lvl, t = cell
        prob = problems[(g, lam)]
        return piccg_solve(prob.a, prob.b, IcParams(lvl, t), sw["tol"], sw["max_iter"], check=False)[1]

    ncell = len(plan.cells)
    reports: list = [None] * ncell
    times = [[] for _ in range(ncell)]
    for i, cell in enumerate(plan.cells):
        try:
            for _ in range(sw["warmup"]):
                reports[i] = solve(cell)
        except BreakdownError:
            reports[i] = False
    for p in range(sw["repeats"]):
        for i, cell in enumerate(plan.cells):
            if reports[i] is False:
                continue
            reports[i] = solve(cell)
            times[i].append(reports[i].elapsed_seconds)
            if progress:
                progress(p * ncell + i + 1, sw["repeats"] * ncell)

    rows, target = [], []
    extra = {k: [] for k in ("grid_n", "lambda2", "iterations", "relative_residual", "nnz_u",
                             "shift_used", "converged")}
    split = plan.split.copy()
    for i, (g, lam, lvl, t) in enumerate(plan.cells):
        rep = reports[i]
        if rep is False:
            ok, it, res, nnz, shift = False, 0, math.inf, 0, math.inf
            times[i] = [1e-9]
        else:
            ok = rep.converged
            it, res, nnz, shift = rep.iterations, rep.relative_residual, rep.nnz_u, rep.shift_used
        rows.append([float(problems[(g, lam)].order), math.log10(lam / sw["lambda1"]), float(lvl), t])
        target.append(statistics.median(times[i]))
        for k, v in zip(extra, (g, lam, it, res, nnz, shift, float(ok))):
            extra[k].append(v)
        if not ok:
            split[i] = EXCLUDED
    d = Dataset(PICCG_FEATURES, rows, target, "regress", "seconds", split, extra, m)
    d.validate()
    return d
