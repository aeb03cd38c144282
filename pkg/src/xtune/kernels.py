"""Executable kernel variants for the accurate matrix product.

All kernels reduce each output element in a fixed order (ascending inner index
for dense, stored column order for sparse), so variants agree bitwise even
before the exact final summation.  Parallelism is over disjoint output rows
("internal") or over independent slice products ("external"); neither changes
any value.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .accumulate import sum_stack
from .matrices import CrsMatrix, EllMatrix, crs_to_ell, dense_to_crs
from .ozaki import SplitSet


class UnsupportedVariant(ValueError):
    """Requested variant has no CPU implementation."""


@dataclass(frozen=True)
class VariantId:
    id: int
    label: str
    executable: bool
    format: str       # dense | CRS | ELL
    scheme: str       # gemm | spmv-internal | spmv-external | spmm | spmm-blocked | batched
    device: str = "cpu"

    @property
    def is_sparse_scheme(self) -> bool:
        return self.format != "dense"


VARIANTS: dict[int, VariantId] = {v.id: v for v in (
    VariantId(1, "BLAS dgemm call (dgemm)", True, "dense", "gemm"),
    VariantId(2, "CRS, SpMV - internal parallel", True, "CRS", "spmv-internal"),
    VariantId(3, "CRS, SpMV - external parallel", True, "CRS", "spmv-external"),
    VariantId(4, "CRS, SpMV - multiple right-hand sides/internal parallel", True, "CRS", "spmm"),
    VariantId(5, "CRS, SpMV - multiple right-hand sides, internal parallel blocking", True, "CRS",
              "spmm-blocked"),
    VariantId(6, "ELL, SpMV - internal parallelism", True, "ELL", "spmv-internal"),
    VariantId(7, "ELL, SpMV - external parallelism", True, "ELL", "spmv-external"),
    VariantId(8, "ELL, SpMV - multiple right-hand sides, internal parallelism", True, "ELL", "spmm"),
    VariantId(9, "ELL, SpMV - multiple right-hand sides/internal parallelism blocking", True, "ELL",
              "spmm-blocked"),
    VariantId(10, "batched BLAS call, dense matrix operation", False, "dense", "batched", "gpu"),
    VariantId(11, "dgemm, dense matrix operation", False, "dense", "gemm", "gpu"),
    VariantId(12, "CRS, SpMV", False, "CRS", "spmv-internal", "gpu"),
    VariantId(13, "ELL, SpMV", False, "ELL", "spmv-internal", "gpu"),
    VariantId(14, "CRS, SpMM", False, "CRS", "spmm", "gpu"),
)}

EXECUTABLE = tuple(v for v in VARIANTS if VARIANTS[v].executable)
DENSE_SCHEME = tuple(v for v in VARIANTS if not VARIANTS[v].is_sparse_scheme)
SPARSE_SCHEME = tuple(v for v in VARIANTS if VARIANTS[v].is_sparse_scheme)


def variant(v) -> VariantId:
    if isinstance(v, VariantId):
        return v
    try:
        return VARIANTS[int(v)]
    except KeyError:
        raise ValueError(f"unknown variant id {v}") from None


@dataclass(frozen=True)
class BlockConfig:
    block_width: int

    def check(self, ncols: int) -> None:
        if not 1 <= self.block_width <= max(ncols, 1):
            raise ValueError(f"block_width must lie in [1, {ncols}], got {self.block_width}")


@dataclass(frozen=True)
class KernelRun:
    variant: VariantId
    elapsed_seconds: float
    result: np.ndarray
    exact: bool = True


def default_threads() -> int:
    return int(os.environ.get("XTUNE_THREADS", "1"))


# --- row-range kernels --------------------------------------------------------

@njit(cache=True, nogil=True)
def _gemm_rows(a, b, c, r0, r1):
    k, m = b.shape
    for i in range(r0, r1):
        for j in range(m):
            c[i, j] = 0.0
        for p in range(k):
            aip = a[i, p]
            for j in range(m):
                c[i, j] += aip * b[p, j]


@njit(cache=True, nogil=True)
def _spmv_crs_rows(row_ptr, col_idx, vals, x, y, r0, r1):
    for i in range(r0, r1):
        s = 0.0
        for t in range(row_ptr[i], row_ptr[i + 1]):
            s += vals[t] * x[col_idx[t]]
        y[i] = s


@njit(cache=True, nogil=True)
def _spmm_crs_rows(row_ptr, col_idx, vals, b, c, r0, r1, c0, c1):
    for i in range(r0, r1):
        for j in range(c0, c1):
            c[i, j] = 0.0
        for t in range(row_ptr[i], row_ptr[i + 1]):
            a = vals[t]
            bp = col_idx[t]
            for j in range(c0, c1):
                c[i, j] += a * b[bp, j]


@njit(cache=True, nogil=True)
def _spmv_ell_rows(col_idx, vals, x, y, r0, r1):
    w = col_idx.shape[1]
    for i in range(r0, r1):
        s = 0.0
        for t in range(w):
            s += vals[i, t] * x[col_idx[i, t]]
        y[i] = s


@njit(cache=True, nogil=True)
def _spmm_ell_rows(col_idx, vals, b, c, r0, r1, c0, c1):
    w = col_idx.shape[1]
    for i in range(r0, r1):
        for j in range(c0, c1):
            c[i, j] = 0.0
        for t in range(w):
            a = vals[i, t]
            bp = col_idx[i, t]
            for j in range(c0, c1):
                c[i, j] += a * b[bp, j]


def _row_chunks(n: int, threads: int):
    threads = max(1, min(threads, n)) if n else 1
    bounds = np.linspace(0, n, threads + 1).astype(int)
    return list(zip(bounds[:-1], bounds[1:]))


def _run_rows(fn, n: int, threads: int, pool: ThreadPoolExecutor | None = None) -> None:
    chunks = _row_chunks(n, threads)
    if pool is None or len(chunks) == 1:
        for r0, r1 in chunks:
            fn(r0, r1)
    else:
        for f in [pool.submit(fn, r0, r1) for r0, r1 in chunks]:
            f.result()


def _check(a_shape, b_rows):
    if a_shape[1] != b_rows:
        raise ValueError(f"dimension mismatch: {a_shape[0]}x{a_shape[1]} times {b_rows} rows")


# --- public kernels -----------------------------------------------------------

def dense_gemm(a, b, threads: int = 1, pool=None) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    _check(a.shape, b.shape[0])
    c = np.empty((a.shape[0], b.shape[1]))
    _run_rows(lambda r0, r1: _gemm_rows(a, b, c, r0, r1), a.shape[0], threads, pool)
    return c


def spmv_crs(a: CrsMatrix, x, threads: int = 1, pool=None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    _check(a.shape, x.shape[0])
    y = np.empty(a.rows)
    _run_rows(lambda r0, r1: _spmv_crs_rows(a.row_ptr, a.col_idx, a.vals, x, y, r0, r1),
              a.rows, threads, pool)
    return y


def spmv_ell(a: EllMatrix, x, threads: int = 1, pool=None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    _check(a.shape, x.shape[0])
    y = np.empty(a.rows)
    _run_rows(lambda r0, r1: _spmv_ell_rows(a.col_idx, a.vals, x, y, r0, r1), a.rows, threads, pool)
    return y


def spmm_crs_blocked(a: CrsMatrix, b, blk: BlockConfig | None = None, threads: int = 1,
                     pool=None) -> np.ndarray:
    """Sparse times dense, sweeping right-hand-side columns in blocks.

    Each sparse row is reused across all columns of a block.  The per-element
    term order is the stored column order regardless of the block width.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    _check(a.shape, b.shape[0])
    width = b.shape[1] if blk is None else blk.block_width
    if blk is not None:
        blk.check(b.shape[1])
    c = np.empty((a.rows, b.shape[1]))
    for c0 in range(0, b.shape[1], width):
        c1 = min(b.shape[1], c0 + width)
        _run_rows(lambda r0, r1: _spmm_crs_rows(a.row_ptr, a.col_idx, a.vals, b, c, r0, r1, c0, c1),
                  a.rows, threads, pool)
    return c


def spmm_crs(a: CrsMatrix, b, threads: int = 1, pool=None) -> np.ndarray:
    return spmm_crs_blocked(a, b, None, threads, pool)


def spmm_ell_blocked(a: EllMatrix, b, blk: BlockConfig | None = None, threads: int = 1,
                     pool=None) -> np.ndarray:
    b = np.ascontiguousarray(b, dtype=np.float64)
    _check(a.shape, b.shape[0])
    width = b.shape[1] if blk is None else blk.block_width
    if blk is not None:
        blk.check(b.shape[1])
    c = np.empty((a.rows, b.shape[1]))
    for c0 in range(0, b.shape[1], width):
        c1 = min(b.shape[1], c0 + width)
        _run_rows(lambda r0, r1: _spmm_ell_rows(a.col_idx, a.vals, b, c, r0, r1, c0, c1),
                  a.rows, threads, pool)
    return c


def spmm_ell(a: EllMatrix, b, threads: int = 1, pool=None) -> np.ndarray:
    return spmm_ell_blocked(a, b, None, threads, pool)


# --- variant driver -----------------------------------------------------------

def _slice_product(v: VariantId, a_dense, a_sparse, b, blk, threads, pool):
    """One exact slice product ``A^(p) B^(q)`` using variant ``v``."""
    if a_sparse is None or v.format == "dense":
        return dense_gemm(a_dense, b, threads, pool)
    if v.scheme in ("spmv-internal", "spmv-external"):
        bt = np.ascontiguousarray(b.T)
        kernel = spmv_crs if v.format == "CRS" else spmv_ell
        out = np.empty((a_dense.shape[0], b.shape[1]))
        for j in range(b.shape[1]):
            out[:, j] = kernel(a_sparse, bt[j], threads, pool)
        return out
    block = blk if v.scheme == "spmm-blocked" else None
    if v.format == "CRS":
        return spmm_crs_blocked(a_sparse, b, block, threads, pool)
    return spmm_ell_blocked(a_sparse, b, block, threads, pool)


def run_variant(v, sa: SplitSet, sb: SplitSet, blk: BlockConfig | None = None,
                threads: int | None = None) -> KernelRun:
    """Accurate product of two split sets with the kernels of variant ``v``.

    Slices of A flagged sparse go through the variant's sparse kernel; dense
    slices always use the dense kernel.  The result is bitwise identical for
    every executable variant, block width and thread count.
    """
    v = variant(v)
    if not v.executable:
        raise UnsupportedVariant(f"variant {v.id} ({v.label}) runs on {v.device} and is not executable here")
    if sa.shape[1] != sb.shape[0]:
        raise ValueError(f"dimension mismatch: {sa.shape} @ {sb.shape}")
    threads = default_threads() if threads is None else threads
    if v.scheme == "spmm-blocked":
        blk = blk or BlockConfig(sb.shape[1])
        blk.check(sb.shape[1])

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        t0 = time.perf_counter()
        if v.format == "ELL":
            a_sparse = [crs_to_ell(c) if c is not None else None for c in sa.crs]
        else:
            a_sparse = list(sa.crs)
        pairs = [(p, q) for p in range(len(sa)) for q in range(len(sb))]
        n, m = sa.shape[0], sb.shape[1]
        terms = np.empty((len(pairs), n, m))

        def work(t):
            p, q = pairs[t]
            inner = None if v.scheme == "spmv-external" else pool
            inner_threads = 1 if v.scheme == "spmv-external" else threads
            terms[t] = _slice_product(v, sa.splits[p], a_sparse[p], sb.splits[q], blk,
                                      inner_threads, inner)

        if v.scheme == "spmv-external" and pool is not None:
            for f in [pool.submit(work, t) for t in range(len(pairs))]:
                f.result()
        else:
            for t in range(len(pairs)):
                work(t)
        result = sum_stack(terms)
        elapsed = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.shutdown()
    return KernelRun(v, max(elapsed, 1e-9), result, sa.remainder_zero and sb.remainder_zero)
