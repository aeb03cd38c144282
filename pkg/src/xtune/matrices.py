"""Dense and sparse matrix containers, conversions and the two test-matrix generators.

Dense matrices are plain two-dimensional ``float64`` numpy arrays.  The sparse
containers are small frozen dataclasses holding numpy arrays; they are treated
as immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PHI_CAP = 30


@dataclass(frozen=True)
class CrsMatrix:
    """Compressed row storage with sorted column indices inside each row."""

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.vals[lo:hi]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        rows = np.repeat(np.arange(self.rows), self.row_nnz())
        out[rows, self.col_idx] = self.vals
        return out

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.rows, self.cols))
        rows = np.repeat(np.arange(self.rows), self.row_nnz())
        on_diag = rows == self.col_idx
        d[rows[on_diag]] = self.vals[on_diag]
        return d

    def transpose(self) -> "CrsMatrix":
        rows = np.repeat(np.arange(self.rows), self.row_nnz())
        order = np.lexsort((rows, self.col_idx))
        counts = np.bincount(self.col_idx, minlength=self.cols)
        row_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        return CrsMatrix(self.cols, self.rows, row_ptr,
                         rows[order].astype(np.int64), self.vals[order].copy())

    def is_symmetric(self) -> bool:
        if self.rows != self.cols:
            return False
        t = self.transpose()
        return (np.array_equal(self.row_ptr, t.row_ptr)
                and np.array_equal(self.col_idx, t.col_idx)
                and np.array_equal(self.vals, t.vals))

    def validate(self) -> None:
        """Raise ``ValueError`` unless the CRS structural invariants hold."""
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (self.rows + 1,):
            raise ValueError(f"row_ptr has length {rp.shape[0]}, expected {self.rows + 1}")
        if rp[0] != 0:
            raise ValueError("row_ptr[0] must be 0")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if rp[-1] != ci.shape[0] or ci.shape != self.vals.shape:
            raise ValueError("row_ptr[-1], col_idx and vals disagree on nnz")
        if ci.size and (ci.min() < 0 or ci.max() >= self.cols):
            raise ValueError("column index out of bounds")
        if ci.size > 1:
            step = np.diff(ci)
            # a row boundary may decrease; inside a row indices must strictly increase
            inside = np.ones(ci.size - 1, dtype=bool)
            starts = rp[1:-1]
            inside[starts[(starts > 0) & (starts < ci.size)] - 1] = False
            if np.any(step[inside] <= 0):
                raise ValueError("column indices must strictly increase within each row")
        if not np.all(np.isfinite(self.vals)):
            raise ValueError("CRS values must be finite")


@dataclass(frozen=True)
class EllMatrix:
    """ELLPACK storage: ``rows x width`` slots, padded with (row's last column, 0.0)."""

    rows: int
    cols: int
    width: int
    col_idx: np.ndarray
    vals: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        if self.width:
            # padding slots repeat a real column with value 0, so add instead of assign
            np.add.at(out, (np.repeat(np.arange(self.rows), self.width), self.col_idx.ravel()),
                      self.vals.ravel())
        return out


@dataclass(frozen=True)
class MatrixStats:
    sparsity: float
    max_abs: float
    min_val: float


def as_dense(m) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting NaN/Inf."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite values")
    return a


def sparsity(m) -> float:
    """Fraction of exactly-zero elements."""
    a = np.asarray(m)
    if a.size == 0:
        raise ValueError("sparsity of an empty matrix is undefined")
    return float(np.count_nonzero(a == 0.0)) / a.size


def matrix_stats(m) -> MatrixStats:
    a = as_dense(m)
    if a.size == 0:
        raise ValueError("empty matrix")
    return MatrixStats(sparsity(a), float(np.abs(a).max()), float(a.min()))


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _open_unit(rng: np.random.Generator, size) -> np.ndarray:
    # uniform on the open interval (0, 1)
    return rng.uniform(2.0 ** -53, 1.0, size=size)


def gen_random_scaled(n: int, target_sparsity: float, phi: int, seed: int,
                      cols: int | None = None) -> np.ndarray:
    """Generator 1: uniform(0,1) entries scaled by ``10**k`` with ``k`` uniform in ``[0, phi)``.

    ``round(target_sparsity * size)`` positions, chosen by a random permutation,
    are set to exactly zero.  The result is ``n x cols`` (square by default).
    """
    if not 1 <= phi <= PHI_CAP:
        raise ValueError(f"phi must lie in [1, {PHI_CAP}], got {phi}")
    if not 0.0 <= target_sparsity < 1.0:
        raise ValueError("target_sparsity must lie in [0, 1)")
    cols = n if cols is None else cols
    if n < 1 or cols < 1:
        raise ValueError("dimensions must be positive")
    size = n * cols
    rng = _rng(seed)
    base = _open_unit(rng, size)
    k = rng.integers(0, phi, size=size)
    vals = base * np.power(10.0, k)
    nzero = int(round(target_sparsity * size))
    vals[rng.permutation(size)[:nzero]] = 0.0
    return vals.reshape(n, cols)


def gen_identity_mix(n: int, target_sparsity: float, seed: int,
                     cols: int | None = None) -> np.ndarray:
    """Generator 2: the identity plus uniform(0,1) off-diagonal entries.

    Only ``round((1 - target_sparsity) * n_off)`` of the ``n_off`` off-diagonal
    positions stay nonzero; the diagonal is always exactly one.
    """
    if not 0.0 <= target_sparsity <= 1.0:
        raise ValueError("target_sparsity must lie in [0, 1]")
    cols = n if cols is None else cols
    if n < 1 or cols < 1:
        raise ValueError("dimensions must be positive")
    rng = _rng(seed)
    off = np.flatnonzero(~np.eye(n, cols, dtype=bool))
    keep = int(round((1.0 - target_sparsity) * off.size))
    out = np.eye(n, cols)
    chosen = off[rng.permutation(off.size)[:keep]]
    out.ravel()[chosen] = _open_unit(rng, keep)
    return out


def dense_to_crs(m, drop_tol: float = 0.0) -> CrsMatrix:
    if drop_tol < 0:
        raise ValueError("drop_tol must be nonnegative")
    a = as_dense(m)
    mask = np.abs(a) > drop_tol
    rows, cols = np.nonzero(mask)
    row_ptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.count_nonzero(mask, axis=1), out=row_ptr[1:])
    return CrsMatrix(a.shape[0], a.shape[1], row_ptr, cols.astype(np.int64), a[rows, cols].copy())


def crs_to_dense(m: CrsMatrix) -> np.ndarray:
    return m.to_dense()


def crs_from_arrays(rows: int, cols: int, row_ptr, col_idx, vals) -> CrsMatrix:
    m = CrsMatrix(int(rows), int(cols), np.asarray(row_ptr, dtype=np.int64),
                  np.asarray(col_idx, dtype=np.int64), np.asarray(vals, dtype=np.float64))
    m.validate()
    return m


def crs_to_ell(m: CrsMatrix) -> EllMatrix:
    counts = m.row_nnz()
    width = int(counts.max()) if m.rows else 0
    col_idx = np.zeros((m.rows, width), dtype=np.int64)
    vals = np.zeros((m.rows, width))
    if width:
        slot = np.arange(m.nnz) - np.repeat(m.row_ptr[:-1], counts)
        rows = np.repeat(np.arange(m.rows), counts)
        col_idx[rows, slot] = m.col_idx
        vals[rows, slot] = m.vals
        # pad with the row's last valid column so gathers stay in bounds
        last = np.where(counts > 0, m.col_idx[np.maximum(m.row_ptr[1:] - 1, 0)] if m.nnz else 0, 0)
        pad = np.arange(width)[None, :] >= counts[:, None]
        col_idx[pad] = np.broadcast_to(last[:, None], pad.shape)[pad]
    return EllMatrix(m.rows, m.cols, width, col_idx, vals)
