"""Local linear regression with a tricube kernel (LOESS, no robustness passes)."""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

DEFAULT_SPAN = 0.75


@dataclass(frozen=True)
class SmoothedSeries:
    x: np.ndarray
    raw: np.ndarray
    smooth: np.ndarray
    span: float


def tricube(u):
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u**3) ** 3


def loess_smooth(x, y, span: float = DEFAULT_SPAN, degree: int = 1) -> np.ndarray:
    """Degree-1 LOESS evaluated at each ``x``.

    The neighbourhood of each point is its ``ceil(span * n)`` nearest
    neighbours; the bandwidth is the distance to the farthest of them.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if degree != 1:
        raise ValueError("only degree 1 is supported")
    if not 0 < span <= 1:
        raise ValueError("span must lie in (0, 1]")
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y differ in length")
    if span * n < degree + 2:
        raise ValueError(f"span*n = {span * n:.3g} < {degree + 2}")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")

    q = min(int(ceil(span * n)), n)
    out = np.empty(n)
    for i in range(n):
        d = np.abs(x - x[i])
        h = np.partition(d, q - 1)[q - 1]
        w = tricube(d / h)
        sw = w.sum()
        if np.count_nonzero(w) < 2:
            raise ValueError("degenerate local design")
        xm = (w @ x) / sw
        ym = (w @ y) / sw
        sxx = w @ (x - xm) ** 2
        if sxx <= 1e-14 * max(1.0, xm * xm) * sw:
            raise ValueError("degenerate local design")
        slope = (w @ ((x - xm) * (y - ym))) / sxx
        out[i] = ym + slope * (x[i] - xm)
    return out


def smoothed(x, y, span: float = DEFAULT_SPAN) -> SmoothedSeries:
    """Pair a raw series with its LOESS curve; NaN entries are left unsmoothed."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y)
    sm = np.full(len(y), np.nan)
    sm[ok] = loess_smooth(x[ok], y[ok], span=span)
    return SmoothedSeries(x=x, raw=y, smooth=sm, span=span)
