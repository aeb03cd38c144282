"""Exact long fixed-point accumulation of binary64 values.

Every finite double is an integer multiple of 2**-1074, so a sum of doubles is
an integer in those units.  The accumulator keeps that integer in base-2**32
digits stored in int64 slots (the spare high bits absorb carries), covering the
whole binary64 exponent range.  Rounding the exact integer back to the nearest
double (ties to even) gives the correctly rounded sum regardless of the order
in which terms were added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

NDIGITS = 70                 # 2098 bits of range + carry headroom, in 32-bit digits
_MASK = (1 << 32) - 1
_TWO53 = 9007199254740992.0

OK, OVERFLOW = 0, 1


class AccumulationOverflow(OverflowError):
    """The exact sum lies outside the binary64 range."""


@dataclass(frozen=True)
class AccumulatorResult:
    value: float
    exact_hit: bool


@njit(cache=True, nogil=True)
def _deposit(acc, x):
    # returns the lowest digit touched, or a large sentinel when x == 0
    if x == 0.0:
        return NDIGITS
    m, e = math.frexp(x)
    neg = m < 0.0
    v = np.int64(abs(m) * _TWO53)
    pos = e + 1021          # bit position of the mantissa LSB above 2**-1074
    if pos < 0:
        v = v >> (-pos)     # subnormal: the shifted-out bits are zero
        pos = 0
    idx = pos >> 5
    off = pos & 31
    t = (v & _MASK) << off
    h = (v >> 32) << off
    if neg:
        acc[idx] -= t & _MASK
        acc[idx + 1] -= (t >> 32) + (h & _MASK)
        acc[idx + 2] -= h >> 32
    else:
        acc[idx] += t & _MASK
        acc[idx + 1] += (t >> 32) + (h & _MASK)
        acc[idx + 2] += h >> 32
    return idx


@njit(cache=True, nogil=True)
def _propagate(acc, lo, top):
    carry = np.int64(0)
    for i in range(lo, top):
        v = acc[i] + carry
        carry = v >> 32
        acc[i] = v & _MASK
    acc[top] += carry


@njit(cache=True, nogil=True)
def _bit(acc, pos):
    return (acc[pos >> 5] >> (pos & 31)) & 1


@njit(cache=True, nogil=True)
def _finalize(acc, lo, hi):
    """Round the exact integer held in ``acc[lo:hi+1]`` and clear it.

    Returns (value, exact, status).
    """
    if lo > hi:
        return 0.0, True, OK
    top = hi + 1
    _propagate(acc, lo, top)
    neg = acc[top] < 0
    if neg:
        for i in range(lo, top + 1):
            acc[i] = -acc[i]
        _propagate(acc, lo, top)
    h = top
    while h >= lo and acc[h] == 0:
        h -= 1
    if h < lo:
        for i in range(lo, top + 1):
            acc[i] = 0
        return 0.0, True, OK
    d = acc[h]
    bl = 0
    while d > 0:
        d >>= 1
        bl += 1
    nbits = 32 * h + bl
    exact = True
    status = OK
    if nbits <= 53:
        # below 2**-1021: every multiple of 2**-1074 is representable
        v = np.int64(0)
        for i in range(lo, h + 1):
            v += acc[i] << (32 * i)
        value = math.ldexp(float(v), -1074)
    else:
        kept = np.int64(0)
        for pos in range(nbits - 1, nbits - 54, -1):
            kept = (kept << 1) | _bit(acc, pos)
        rpos = nbits - 54
        round_bit = _bit(acc, rpos)
        sticky = False
        ridx = rpos >> 5
        for i in range(lo, ridx):
            if acc[i] != 0:
                sticky = True
                break
        if not sticky and ridx >= lo:
            sticky = (acc[ridx] & ((np.int64(1) << (rpos & 31)) - 1)) != 0
        exact = round_bit == 0 and not sticky
        if round_bit == 1 and (sticky or (kept & 1) == 1):
            kept += 1
            if kept == np.int64(1) << 53:
                kept = np.int64(1) << 52
                nbits += 1
        if nbits - 1074 > 1024:
            status = OVERFLOW
            value = math.inf
        else:
            value = math.ldexp(float(kept), nbits - 53 - 1074)
    for i in range(lo, top + 1):
        acc[i] = 0
    if neg:
        value = -value
    return value, exact, status


@njit(cache=True, nogil=True)
def _sum_1d(values, acc):
    lo = NDIGITS
    hi = -1
    for k in range(values.shape[0]):
        idx = _deposit(acc, values[k])
        if idx < NDIGITS:
            lo = min(lo, idx)
            hi = max(hi, idx + 2)
    return _finalize(acc, lo, hi)


@njit(cache=True, nogil=True)
def _sum_columns(terms, out, status):
    """out[e] = correctly rounded sum of terms[:, e]."""
    acc = np.zeros(NDIGITS, dtype=np.int64)
    nterm, nelem = terms.shape
    for e in range(nelem):
        lo = NDIGITS
        hi = -1
        for k in range(nterm):
            idx = _deposit(acc, terms[k, e])
            if idx < NDIGITS:
                lo = min(lo, idx)
                hi = max(hi, idx + 2)
        value, _, st = _finalize(acc, lo, hi)
        out[e] = value
        status[e] = st


def correctly_rounded_sum(values) -> AccumulatorResult:
    """Sum doubles exactly and round once to the nearest double (ties to even)."""
    arr = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    value, exact, status = _sum_1d(arr, np.zeros(NDIGITS, dtype=np.int64))
    if status == OVERFLOW:
        raise AccumulationOverflow("exact sum exceeds the binary64 range")
    return AccumulatorResult(float(value), bool(exact))


def sum_stack(terms: np.ndarray) -> np.ndarray:
    """Correctly rounded element-wise sum over the first axis of ``terms``."""
    terms = np.asarray(terms, dtype=np.float64)
    shape = terms.shape[1:]
    flat = np.ascontiguousarray(terms.reshape(terms.shape[0], -1))
    out = np.empty(flat.shape[1])
    status = np.zeros(flat.shape[1], dtype=np.int8)
    _sum_columns(flat, out, status)
    if np.any(status == OVERFLOW):
        raise AccumulationOverflow("exact sum exceeds the binary64 range")
    return out.reshape(shape)
