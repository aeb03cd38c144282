"""Incomplete Cholesky with fill levels and a drop threshold, and the PICCG solver.

The factorization computes ``A ~ S^-1 U^T D U S^-1`` where ``S`` scales ``A``
to unit diagonal, ``U`` is unit upper triangular (diagonal implicit) and ``D``
is diagonal.  A structurally-zero position that becomes nonzero (a fill-in)
carries a level ``f_ij = min_k (f_ik + f_kj + 1)``; original entries have
level 0.  Fill-ins are kept only when ``f_ij <= m`` and ``|u_ij| >= t``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .matrices import CrsMatrix

UNBOUNDED = math.inf
_LEVEL_INF = np.int64(1) << 40

MAX_SHIFT_RETRIES = 8


class BreakdownError(ArithmeticError):
    """Nonpositive pivot persisted through every diagonal-shift retry."""


@dataclass(frozen=True)
class IcParams:
    max_fill_level: float = 0
    threshold: float = 0.0

    def __post_init__(self):
        m = self.max_fill_level
        if not (m == UNBOUNDED or (m >= 0 and float(m).is_integer())):
            raise ValueError("max_fill_level must be a nonnegative integer or inf")
        if not self.threshold >= 0:
            raise ValueError("threshold must be nonnegative")

    @property
    def level_cap(self) -> int:
        return int(_LEVEL_INF) if self.max_fill_level == UNBOUNDED else int(self.max_fill_level)


@dataclass(frozen=True)
class IcFactor:
    u: CrsMatrix            # strict upper part of the unit upper triangular factor
    d: np.ndarray
    fill_level: np.ndarray  # aligned with u.col_idx
    scale: np.ndarray       # 1/sqrt(diag(A))
    shift_used: float       # shift added to the unit-diagonal scaled matrix

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def nnz(self) -> int:
        return self.u.nnz

    def scaled_product(self) -> np.ndarray:
        """Dense ``U^T D U`` (the approximation of the scaled matrix)."""
        u = self.u.to_dense() + np.eye(self.n)
        return u.T @ (self.d[:, None] * u)

    def product(self) -> np.ndarray:
        """Dense approximation of the original matrix, scaling undone."""
        inv = 1.0 / self.scale
        return inv[:, None] * self.scaled_product() * inv[None, :]


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    elapsed_seconds: float
    converged: bool
    setup_seconds: float = 0.0
    shift_used: float = 0.0
    nnz_u: int = 0
    tol: float = 0.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class P3dProblem:
    n: int
    lambda1: float
    lambda2: float
    layer: tuple[int, int]
    a: CrsMatrix
    b: np.ndarray

    @property
    def order(self) -> int:
        return self.n ** 3


# --- factorization ------------------------------------------------------------

@njit(cache=True)
def _grow(arr, need):
    if need <= arr.shape[0]:
        return arr
    out = np.empty(max(need, 2 * arr.shape[0]), dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@njit(cache=True)
def _ic_kernel(row_ptr, col_idx, vals, scale, shift, level_cap, thresh):
    n = row_ptr.shape[0] - 1
    cap = max(16, 2 * row_ptr[n])
    ucol = np.empty(cap, dtype=np.int64)
    uval = np.empty(cap, dtype=np.float64)
    ulev = np.empty(cap, dtype=np.int64)
    cnext = np.empty(cap, dtype=np.int64)
    ustart = np.zeros(n + 1, dtype=np.int64)
    colhead = np.full(n, -1, dtype=np.int64)
    coltail = np.full(n, -1, dtype=np.int64)
    d = np.empty(n)
    wval = np.zeros(n)
    wlev = np.zeros(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    touched = np.empty(n, dtype=np.int64)
    nnz = 0
    for i in range(n):
        nt = 0
        diag = shift
        for t in range(row_ptr[i], row_ptr[i + 1]):
            j = col_idx[t]
            if j < i or vals[t] == 0.0:
                continue
            v = vals[t] * scale[i] * scale[j]
            if j == i:
                diag += v
            else:
                wval[j] = v
                wlev[j] = 0
                mark[j] = i
                touched[nt] = j
                nt += 1
        e = colhead[i]
        while e != -1:
            # e holds u_ki (k < i); the rest of row k lies right after it
            uki = uval[e]
            lki = ulev[e]
            k = cnext[e] >> 32
            k_end = ustart[k + 1]
            f = uki * d[k]
            diag -= f * uki
            for e2 in range(e + 1, k_end):
                j = ucol[e2]
                lev = lki + ulev[e2] + 1
                if mark[j] != i:
                    mark[j] = i
                    wval[j] = -(f * uval[e2])
                    wlev[j] = lev
                    touched[nt] = j
                    nt += 1
                else:
                    wval[j] -= f * uval[e2]
                    if lev < wlev[j]:
                        wlev[j] = lev
            e = (cnext[e] & 0xFFFFFFFF) - 1
        if not diag > 0.0:
            return i, ucol[:0], uval[:0], ulev[:0], ustart, d
        d[i] = diag
        cols = np.sort(touched[:nt])
        need = nnz + nt
        if need > ucol.shape[0]:
            ucol = _grow(ucol, need)
            uval = _grow(uval, need)
            ulev = _grow(ulev, need)
            cnext = _grow(cnext, need)
        for j in cols:
            u = wval[j] / diag
            lev = wlev[j]
            if lev == 0 or (lev <= level_cap and abs(u) >= thresh):
                ucol[nnz] = j
                uval[nnz] = u
                ulev[nnz] = lev
                # high half: owning row; low half: next entry in the column list (+1, 0 = end)
                cnext[nnz] = i << 32
                if coltail[j] == -1:
                    colhead[j] = nnz
                else:
                    cnext[coltail[j]] = (cnext[coltail[j]] & ~np.int64(0xFFFFFFFF)) | (nnz + 1)
                coltail[j] = nnz
                nnz += 1
        ustart[i + 1] = nnz
    return -1, ucol[:nnz].copy(), uval[:nnz].copy(), ulev[:nnz].copy(), ustart, d


def _check_symmetric(a: CrsMatrix) -> None:
    if a.rows != a.cols:
        raise ValueError("matrix must be square")
    if not a.is_symmetric():
        raise ValueError("matrix must be symmetric")


def ic_factorize(a: CrsMatrix, params: IcParams | None = None, check: bool = True) -> IcFactor:
    """Threshold incomplete Cholesky ``IC(m, t)`` of a symmetric matrix.

    A nonpositive pivot restarts the factorization with ``alpha * I`` added to
    the unit-diagonal scaled matrix, ``alpha`` starting at 0.01 and doubling.
    """
    params = params or IcParams()
    if check:
        _check_symmetric(a)
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise ValueError("matrix must have a positive diagonal")
    scale = 1.0 / np.sqrt(diag)
    shift = 0.0
    for attempt in range(MAX_SHIFT_RETRIES + 1):
        bad_row, ucol, uval, ulev, ustart, d = _ic_kernel(
            a.row_ptr, a.col_idx, a.vals, scale, shift, params.level_cap, float(params.threshold))
        if bad_row < 0:
            u = CrsMatrix(a.rows, a.cols, ustart, ucol, uval)
            return IcFactor(u, d, ulev, scale, shift)
        shift = 0.01 if shift == 0.0 else 2.0 * shift
    raise BreakdownError(f"nonpositive pivot at row {bad_row} after {MAX_SHIFT_RETRIES} shift retries")


# --- preconditioner and solver ------------------------------------------------

@njit(cache=True, nogil=True)
def _ic_apply(ustart, ucol, uval, d, scale, r, z):
    n = d.shape[0]
    for i in range(n):
        z[i] = r[i] * scale[i]
    # U^T y = s r  (column sweep over the rows of U)
    for k in range(n):
        yk = z[k]
        for e in range(ustart[k], ustart[k + 1]):
            z[ucol[e]] -= uval[e] * yk
    for i in range(n):
        z[i] /= d[i]
    # U x = y
    for i in range(n - 1, -1, -1):
        s = z[i]
        for e in range(ustart[i], ustart[i + 1]):
            s -= uval[e] * z[ucol[e]]
        z[i] = s
    for i in range(n):
        z[i] *= scale[i]


@njit(cache=True, nogil=True)
def _spmv(row_ptr, col_idx, vals, x, y):
    for i in range(row_ptr.shape[0] - 1):
        s = 0.0
        for t in range(row_ptr[i], row_ptr[i + 1]):
            s += vals[t] * x[col_idx[t]]
        y[i] = s


@njit(cache=True, nogil=True)
def _dot(x, y):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * y[i]
    return s


@njit(cache=True, nogil=True)
def _pcg(row_ptr, col_idx, vals, b, ustart, ucol, uval, d, scale, tol, max_iter, x):
    n = b.shape[0]
    r = b.copy()
    for i in range(n):
        x[i] = 0.0
    bnorm = math.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return 0, 0.0
    z = np.empty(n)
    q = np.empty(n)
    _ic_apply(ustart, ucol, uval, d, scale, r, z)
    p = z.copy()
    rz = _dot(r, z)
    it = 0
    while it < max_iter:
        _spmv(row_ptr, col_idx, vals, p, q)
        pq = _dot(p, q)
        if not pq > 0.0:
            break
        alpha = rz / pq
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * q[i]
        it += 1
        if math.sqrt(_dot(r, r)) <= tol * bnorm:
            _spmv(row_ptr, col_idx, vals, x, q)
            for i in range(n):
                r[i] = b[i] - q[i]
            if math.sqrt(_dot(r, r)) <= tol * bnorm:
                break
        _ic_apply(ustart, ucol, uval, d, scale, r, z)
        rz_new = _dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
    _spmv(row_ptr, col_idx, vals, x, q)
    for i in range(n):
        r[i] = b[i] - q[i]
    return it, math.sqrt(_dot(r, r)) / bnorm


def apply_preconditioner(f: IcFactor, r) -> np.ndarray:
    """Solve ``S^-1 U^T D U S^-1 z = r``."""
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.shape != (f.n,):
        raise ValueError(f"vector of length {r.shape} does not match factor of order {f.n}")
    z = np.empty_like(r)
    _ic_apply(f.u.row_ptr, f.u.col_idx, f.u.vals, f.d, f.scale, r, z)
    return z


def piccg_solve(a: CrsMatrix, b, params: IcParams | None = None, tol: float = 1e-8,
                max_iter: int = 10000, check: bool = True) -> tuple[np.ndarray, SolveReport]:
    """Conjugate gradients preconditioned by ``IC(m, t)``, starting from zero.

    The reported time covers factorization and iteration.  Failure to reach
    ``tol`` yields ``converged=False`` rather than an exception.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.shape != (a.rows,):
        raise ValueError("right-hand side does not match the matrix")
    if check:
        _check_symmetric(a)
    t0 = time.perf_counter()
    f = ic_factorize(a, params, check=False)
    t1 = time.perf_counter()
    x = np.empty_like(b)
    it, rel = _pcg(a.row_ptr, a.col_idx, a.vals, b, f.u.row_ptr, f.u.col_idx, f.u.vals, f.d, f.scale,
                   float(tol), int(max_iter), x)
    t2 = time.perf_counter()
    report = SolveReport(int(it), float(rel), t2 - t0, bool(rel <= tol), t1 - t0, f.shift_used,
                         f.nnz, float(tol))
    return x, report


# --- P3D problem --------------------------------------------------------------

def default_layer(n: int) -> tuple[int, int]:
    """Middle third of the z axis (half-open index range)."""
    lo = n // 3
    return lo, max(lo + 1, (2 * n) // 3)


def p3d_generate(n: int, lambda1: float = 1.0, lambda2: float = 1.0,
                 layer: tuple[int, int] | None = None) -> P3dProblem:
    """7-point finite-volume heat conduction on the unit cube with a low-conductivity slab.

    Cells with z index in ``layer`` have conductivity ``lambda2``, the rest
    ``lambda1``.  Interior faces use the harmonic mean of the two cells;
    boundary faces are Dirichlet (zero) at half a cell's distance.  Unknowns are
    numbered x fastest, z slowest.  The source term is one in every cell.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < lambda2 <= lambda1:
        raise ValueError("need 0 < lambda2 <= lambda1")
    layer = default_layer(n) if layer is None else (int(layer[0]), int(layer[1]))
    if not 0 <= layer[0] < layer[1] <= n:
        raise ValueError(f"layer {layer} outside 0..{n}")
    h = 1.0 / n
    z = np.arange(n)
    lam_z = np.where((z >= layer[0]) & (z < layer[1]), lambda2, lambda1)
    lam = np.broadcast_to(lam_z[:, None, None], (n, n, n)).ravel()   # index = x + n*y + n*n*z
    N = n ** 3
    idx = np.arange(N)
    coords = (idx % n, (idx // n) % n, idx // (n * n))
    strides = (1, n, n * n)

    diag = np.zeros(N)
    cols = np.full((N, 7), -1, dtype=np.int64)
    vals = np.zeros((N, 7))
    # slot order -z, -y, -x, self, +x, +y, +z keeps columns ascending
    slots = {(2, -1): 0, (1, -1): 1, (0, -1): 2, (0, 1): 4, (1, 1): 5, (2, 1): 6}
    for (axis, sgn), slot in slots.items():
        c = coords[axis]
        inside = (c + sgn >= 0) & (c + sgn < n)
        nb = idx + sgn * strides[axis]
        lam_nb = np.where(inside, lam[np.where(inside, nb, idx)], lam)
        face = np.where(inside, 2.0 * lam * lam_nb / (lam + lam_nb) * h, 2.0 * lam * h)
        diag += face
        cols[inside, slot] = nb[inside]
        vals[inside, slot] = -face[inside]
    cols[:, 3] = idx
    vals[:, 3] = diag
    keep = cols >= 0
    row_ptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(keep.sum(axis=1), out=row_ptr[1:])
    a = CrsMatrix(N, N, row_ptr, cols[keep], vals[keep])
    return P3dProblem(n, float(lambda1), float(lambda2), layer, a, np.ones(N))
