"""Quadrature, compensated summation and root bracketing."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

__all__ = [
    "adaptive_simpson",
    "adaptive_simpson_pieces",
    "bisect_increasing",
    "compensated_cumsum",
    "compensated_sum",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]


def compensated_sum(values) -> float:
    """Correctly rounded sum (Shewchuk, via ``math.fsum``)."""
    return math.fsum(values)


def compensated_cumsum(values) -> np.ndarray:
    """Running sums with Neumaier-compensated accumulation.

    Plain ``np.cumsum`` loses roughly ``log2(n)`` bits on long series of
    decaying positive terms; this keeps each partial sum within a couple of
    ulps of the exact value.
    """
    seq = np.asarray(values, dtype=np.float64).tolist()
    out = [0.0] * len(seq)
    s = 0.0
    c = 0.0
    for i, x in enumerate(seq):
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = s + c
    return np.asarray(out, dtype=np.float64)


def _finite_endpoints(f: ArrayFn, x: np.ndarray, inward: np.ndarray) -> np.ndarray:
    y = np.asarray(f(x), dtype=np.float64)
    bad = ~np.isfinite(y)
    if bad.any():
        # integrable endpoint singularity: approach from inside the interval
        y = y.copy()
        y[bad] = np.asarray(f(x[bad] + inward[bad]), dtype=np.float64)
    return y


def adaptive_simpson_pieces(
    f: ArrayFn,
    edges,
    tol: float = 1e-10,
    rtol: float = 0.0,
    max_depth: int = 48,
) -> np.ndarray:
    """Integrate ``f`` over every piece ``[edges[i], edges[i+1]]``.

    ``f`` must accept and return arrays.  All pieces are refined together:
    each round evaluates the two quarter points of every live interval in
    one call.  An interval is accepted when the Richardson error estimate is
    below ``max(tol_i, rtol * |S|)``, where ``tol_i`` is the absolute budget
    ``tol`` shared out in proportion to interval width and halved on every
    split.
    """
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim != 1 or e.size < 2:
        raise ValueError("need at least two edges")
    lo, hi = e[:-1].copy(), e[1:].copy()
    npieces = lo.size
    width = hi - lo
    total = float(np.sum(np.abs(width)))
    out = np.zeros(npieces)
    if total == 0.0:
        return out
    nudge = width * 1e-12
    flo = _finite_endpoints(f, lo, nudge)
    fhi = _finite_endpoints(f, hi, -nudge)
    mid = 0.5 * (lo + hi)
    fmid = np.asarray(f(mid), dtype=np.float64)
    whole = width / 6.0 * (flo + 4.0 * fmid + fhi)
    tol_i = tol * np.abs(width) / total
    piece = np.arange(npieces)
    depth = 0
    while lo.size:
        lq = 0.5 * (lo + mid)
        rq = 0.5 * (mid + hi)
        f_lq = np.asarray(f(lq), dtype=np.float64)
        f_rq = np.asarray(f(rq), dtype=np.float64)
        half = 0.5 * (hi - lo)
        left = half / 6.0 * (flo + 4.0 * f_lq + fmid)
        right = half / 6.0 * (fmid + 4.0 * f_rq + fhi)
        both = left + right
        err = both - whole
        budget = np.maximum(tol_i, rtol * np.abs(both))
        done = (np.abs(err) <= 15.0 * budget) | (depth >= max_depth) | (half == 0.0)
        if done.any():
            np.add.at(out, piece[done], both[done] + err[done] / 15.0)
        keep = ~done
        if not keep.any():
            break
        k = keep
        lo, mid, hi = lo[k], mid[k], hi[k]
        flo, fmid, fhi = flo[k], fmid[k], fhi[k]
        f_lq, f_rq = f_lq[k], f_rq[k]
        left, right = left[k], right[k]
        tol_i, piece = tol_i[k], piece[k]
        # children: [lo, mid] and [mid, hi]
        lo = np.concatenate([lo, mid])
        hi_new = np.concatenate([mid, hi])
        flo = np.concatenate([flo, fmid])
        fhi = np.concatenate([fmid, fhi])
        fmid = np.concatenate([f_lq, f_rq])
        whole = np.concatenate([left, right])
        tol_i = np.concatenate([tol_i, tol_i]) * 0.5
        piece = np.concatenate([piece, piece])
        hi = hi_new
        mid = 0.5 * (lo + hi)
        depth += 1
    return out


def adaptive_simpson(
    f: ArrayFn,
    a: float,
    b: float,
    tol: float = 1e-10,
    rtol: float = 0.0,
    split: float | None = None,
    max_depth: int = 48,
) -> float:
    """Adaptive composite Simpson integral of ``f`` over ``[a, b]``.

    ``split`` inserts an extra break point, used to isolate an endpoint
    singularity (``f`` may be infinite at ``a``; such values are replaced by
    a one-sided limit taken just inside the interval).
    """
    if a == b:
        return 0.0
    if a > b:
        return -adaptive_simpson(f, b, a, tol, rtol, split, max_depth)
    edges = [a, b] if split is None or not a < split < b else [a, split, b]
    return compensated_sum(adaptive_simpson_pieces(f, edges, tol, rtol, max_depth))


def bisect_increasing(
    fn: ArrayFn,
    target,
    lo: float = 0.0,
    hi: float = 1.0,
    xtol: float = 1e-12,
    max_doublings: int = 1100,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve ``fn(x) = target`` elementwise for strictly increasing ``fn``.

    The upper bracket starts at ``hi`` and doubles until ``fn(hi)`` reaches
    the target; bisection then stops once the bracket is narrower than
    ``xtol * x`` (relative), or after ``max_iter`` halvings.  Targets the
    function never reaches raise ``OverflowError``.
    """
    y = np.atleast_1d(np.asarray(target, dtype=np.float64))
    a = np.full(y.shape, float(lo))
    b = np.full(y.shape, float(hi))
    at_lo = y <= fn(a)
    need = fn(b) < y
    n = 0
    while need.any():
        b[need] *= 2.0
        n += 1
        if n > max_doublings or not np.isfinite(b).all():
            raise OverflowError("target outside the range of the function")
        need = fn(b) < y
    for _ in range(max_iter):
        width = b - a
        if np.all((width <= xtol * b) | at_lo):
            break
        m = 0.5 * (a + b)
        below = fn(m) < y
        a = np.where(below, m, a)
        b = np.where(below, b, m)
    return np.where(at_lo, float(lo), 0.5 * (a + b))
