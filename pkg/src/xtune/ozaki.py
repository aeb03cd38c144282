"""Error-free splitting of matrices and accurate matrix multiplication.

A matrix is cut into a short series of slices ``A = A1 + A2 + ... + Ap`` whose
entries carry few enough significant bits that every product of an A-slice row
with a B-slice column, accumulated over the inner dimension in binary64, is
exact.  The final answer is the correctly rounded sum of all slice products.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .accumulate import sum_stack
from .matrices import CrsMatrix, as_dense, dense_to_crs

ROW_SPLIT = "row"
COL_SPLIT = "col"


class DegradedAccuracyWarning(UserWarning):
    """Split cap reached; slice products involving the remainder may be inexact."""


@dataclass(frozen=True)
class SplitConfig:
    max_splits: int = 8
    sparse_threshold: float = 0.8

    def __post_init__(self):
        if self.max_splits < 1:
            raise ValueError("max_splits must be at least 1")
        if not 0.0 <= self.sparse_threshold <= 1.0:
            raise ValueError("sparse_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class SplitSet:
    side: str
    splits: tuple[np.ndarray, ...]
    crs: tuple[CrsMatrix | None, ...]
    is_sparse: tuple[bool, ...]
    remainder_zero: bool
    inner_dim: int

    def __len__(self) -> int:
        return len(self.splits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.splits[0].shape


def bits_per_slice(inner_dim: int) -> int:
    """Significant bits kept per slice entry for a dot product of length ``inner_dim``."""
    if inner_dim < 1:
        raise ValueError("inner dimension must be positive")
    return (53 - int(np.ceil(np.log2(inner_dim)))) // 2


def _ceil_log2(x: np.ndarray) -> np.ndarray:
    # exact ceil(log2 x) for x > 0 via the binary exponent
    frac, exp = np.frexp(x)
    return np.where(frac == 0.5, exp - 1, exp)


def _extract_rows(r: np.ndarray, shift_bits: int) -> np.ndarray:
    """Leading bits of each row of ``r`` by the add-and-subtract trick."""
    rowmax = np.abs(r).max(axis=1)
    live = rowmax > 0
    exps = np.zeros(r.shape[0], dtype=np.int64)
    exps[live] = _ceil_log2(rowmax[live]) + shift_bits
    if np.any(exps[live] > 1023):
        raise ValueError("entries too large for error-free splitting")
    sigma = np.where(live, np.ldexp(1.0, exps.astype(np.int32)), 0.0)[:, None]
    return (r + sigma) - sigma


def split_matrix(m, side: str = ROW_SPLIT, cfg: SplitConfig | None = None,
                 inner_dim: int | None = None) -> SplitSet:
    """Split ``m`` row-wise (left factor) or column-wise (right factor).

    The first slice carries the highest-order bits.  Splitting stops when the
    remainder vanishes or when ``cfg.max_splits`` slices exist; in the latter
    case the last slice is the full remainder and ``remainder_zero`` is False.
    """
    cfg = cfg or SplitConfig()
    a = as_dense(m)
    if side not in (ROW_SPLIT, COL_SPLIT):
        raise ValueError(f"side must be '{ROW_SPLIT}' or '{COL_SPLIT}'")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    work = a if side == ROW_SPLIT else a.T
    k = inner_dim if inner_dim is not None else work.shape[1]
    shift_bits = 53 - bits_per_slice(k)

    slices = []
    rem = work.copy()
    remainder_zero = True
    while np.any(rem != 0.0):
        if len(slices) == cfg.max_splits - 1:
            head = _extract_rows(rem, shift_bits)
            if np.array_equal(head, rem):
                slices.append(head)
            else:
                slices.append(rem)
                remainder_zero = False
            break
        head = _extract_rows(rem, shift_bits)
        slices.append(head)
        rem = rem - head
    if not slices:
        slices.append(np.zeros_like(work))

    if side == COL_SPLIT:
        slices = [np.ascontiguousarray(s.T) for s in slices]
    flags = tuple(bool(np.count_nonzero(s == 0.0) / s.size > cfg.sparse_threshold) if s.size else False
                  for s in slices)
    crs = tuple(dense_to_crs(s) if f else None for s, f in zip(slices, flags))
    return SplitSet(side, tuple(slices), crs, flags, remainder_zero, int(k))


def count_splits(s: SplitSet) -> tuple[int, int, int]:
    """(sparse_count, dense_count, total)."""
    sparse = sum(s.is_sparse)
    return sparse, len(s) - sparse, len(s)


def accurate_matmul(a, b, cfg: SplitConfig | None = None) -> np.ndarray:
    """Correctly rounded sum of all exact slice products of ``a @ b``.

    When both split sets end with a zero remainder this is the exact product
    rounded once to nearest.  Otherwise a ``DegradedAccuracyWarning`` is issued.
    """
    a = as_dense(a)
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    cfg = cfg or SplitConfig()
    sa = split_matrix(a, ROW_SPLIT, cfg)
    sb = split_matrix(b, COL_SPLIT, cfg, inner_dim=a.shape[1])
    return accurate_product(sa, sb)


def accurate_product(sa: SplitSet, sb: SplitSet, chunk_elems: int = 1 << 22) -> np.ndarray:
    """Reference path: numpy products of every slice pair, then exact summation."""
    if not (sa.remainder_zero and sb.remainder_zero):
        warnings.warn("split cap reached; result may not be correctly rounded",
                      DegradedAccuracyWarning, stacklevel=2)
    n, m = sa.shape[0], sb.shape[1]
    npairs = len(sa) * len(sb)
    out = np.empty((n, m))
    step = max(1, chunk_elems // max(1, npairs * m))
    for r0 in range(0, n, step):
        r1 = min(n, r0 + step)
        terms = np.empty((npairs, r1 - r0, m))
        t = 0
        for ap in sa.splits:
            for bq in sb.splits:
                np.matmul(ap[r0:r1], bq, out=terms[t])
                t += 1
        out[r0:r1] = sum_stack(terms)
    return out
