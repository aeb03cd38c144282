"""Matrix Market coordinate I/O (real, general or symmetric)."""

from __future__ import annotations

import os

import numpy as np

from .matrices import CrsMatrix


class MatrixMarketError(ValueError):
    """Base class for malformed Matrix Market input."""


class MMHeaderError(MatrixMarketError):
    pass


class MMIndexError(MatrixMarketError):
    pass


class MMDuplicateError(MatrixMarketError):
    pass


def _coo_to_crs(nrows, ncols, r, c, v) -> CrsMatrix:
    order = np.lexsort((c, r))
    r, c, v = r[order], c[order], v[order]
    if r.size > 1:
        dup = (np.diff(r) == 0) & (np.diff(c) == 0)
        if np.any(dup):
            k = int(np.flatnonzero(dup)[0])
            raise MMDuplicateError(f"duplicate entry at ({r[k] + 1}, {c[k] + 1})")
    row_ptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=nrows), out=row_ptr[1:])
    return CrsMatrix(nrows, ncols, row_ptr, c.astype(np.int64), v.astype(np.float64))


def mm_read(path) -> CrsMatrix:
    with open(path, "r") as fh:
        banner = fh.readline().split()
        if (len(banner) != 5 or banner[0] != "%%MatrixMarket" or banner[1].lower() != "matrix"
                or banner[2].lower() != "coordinate"):
            raise MMHeaderError(f"{path}: not a Matrix Market coordinate file")
        field, symmetry = banner[3].lower(), banner[4].lower()
        if field not in ("real", "integer", "double"):
            raise MMHeaderError(f"{path}: unsupported field '{field}'")
        if symmetry not in ("general", "symmetric"):
            raise MMHeaderError(f"{path}: unsupported symmetry '{symmetry}'")
        line = fh.readline()
        while line.startswith("%") or not line.strip():
            if not line:
                raise MMHeaderError(f"{path}: missing size line")
            line = fh.readline()
        try:
            nrows, ncols, nnz = (int(tok) for tok in line.split())
        except ValueError:
            raise MMHeaderError(f"{path}: bad size line {line.strip()!r}") from None
        body = [ln for ln in fh.read().splitlines() if ln.strip() and not ln.startswith("%")]
    if len(body) != nnz:
        raise MMHeaderError(f"{path}: header announces {nnz} entries, found {len(body)}")
    if nnz:
        try:
            parts = np.array([ln.split() for ln in body], dtype=object)
            r = np.array([int(p) for p in parts[:, 0]], dtype=np.int64) - 1
            c = np.array([int(p) for p in parts[:, 1]], dtype=np.int64) - 1
            v = np.array([float(p) for p in parts[:, 2]], dtype=np.float64)
        except (ValueError, IndexError):
            raise MMHeaderError(f"{path}: malformed entry line") from None
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    if nnz and (r.min() < 0 or c.min() < 0 or r.max() >= nrows or c.max() >= ncols):
        raise MMIndexError(f"{path}: entry index outside {nrows}x{ncols}")
    if symmetry == "symmetric":
        if nrows != ncols:
            raise MMHeaderError(f"{path}: symmetric matrix must be square")
        if np.any(c > r):
            raise MMIndexError(f"{path}: symmetric file has entries above the diagonal")
        off = r != c
        r, c, v = np.concatenate((r, c[off])), np.concatenate((c, r[off])), np.concatenate((v, v[off]))
    return _coo_to_crs(nrows, ncols, r, c, v)


def mm_write(path, m: CrsMatrix, symmetric: bool = False, comment: str | None = None) -> None:
    """Write ``m``; with ``symmetric=True`` only the lower triangle is stored."""
    rows = np.repeat(np.arange(m.rows), m.row_nnz())
    cols, vals = m.col_idx, m.vals
    if symmetric:
        if not m.is_symmetric():
            raise ValueError("matrix is not symmetric")
        keep = cols <= rows
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    kind = "symmetric" if symmetric else "general"
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {kind}\n")
        if comment:
            for ln in comment.splitlines():
                fh.write(f"% {ln}\n")
        fh.write(f"{m.rows} {m.cols} {rows.size}\n")
        fh.writelines(f"{i + 1} {j + 1} {x:.17g}\n" for i, j, x in zip(rows.tolist(), cols.tolist(), vals.tolist()))
    os.replace(tmp, path)


def write_vector(path, x) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{v:.17g}\n" for v in np.asarray(x, dtype=np.float64).tolist())


def read_vector(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(ln) for ln in fh if ln.strip() and not ln.startswith("%")])
