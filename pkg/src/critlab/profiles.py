"""Closed-form radial profiles shared by several modules."""

from __future__ import annotations

import numpy as np


def smoothstep_cutoff(d, delta: float, order: int = 0) -> np.ndarray:
    """Quintic-smoothstep cutoff equal to 1 on [0, delta] and 0 beyond 2 delta.

    order = 1, 2 return the first and second derivatives in d.
    """
    d = np.asarray(d, dtype=float)
    x = np.clip((d - delta) / delta, 0.0, 1.0)
    inside = (d > delta) & (d < 2 * delta)
    if order == 0:
        return 1.0 - (10 * x ** 3 - 15 * x ** 4 + 6 * x ** 5)
    if order == 1:
        return np.where(inside, -(30 * x ** 2 - 60 * x ** 3 + 30 * x ** 4) / delta, 0.0)
    if order == 2:
        return np.where(inside, -(60 * x - 180 * x ** 2 + 120 * x ** 3) / delta ** 2, 0.0)
    raise ValueError("order must be 0, 1 or 2")


def cubic_bump(d, t: float, order: int = 0) -> np.ndarray:
    """P(d) = (1 - d^2/t^2)^3 for d < t, else 0; C^2 with P(0) = 1."""
    d = np.asarray(d, dtype=float)
    s = np.clip(1.0 - (d / t) ** 2, 0.0, None)
    if order == 0:
        return s ** 3
    if order == 1:
        return -6.0 * d / t ** 2 * s ** 2
    if order == 2:
        return -6.0 / t ** 2 * s ** 2 + 24.0 * d ** 2 / t ** 4 * s
    raise ValueError("order must be 0, 1 or 2")


def cot_minus_inv(r) -> np.ndarray:
    """cot r - 1/r, with a series near r = 0 to avoid cancellation."""
    r = np.asarray(r, dtype=float)
    small = np.abs(r) < 1e-2
    rs = np.where(small, 1.0, r)
    exact = np.cos(rs) / np.sin(rs) - 1.0 / rs
    r2 = r * r
    series = -r / 3.0 - r * r2 / 45.0 - 2.0 * r * r2 * r2 / 945.0
    return np.where(small, series, exact)


def gauss_cells(edges: np.ndarray, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on consecutive cells.

    Returns arrays of shape (cells, order).
    """
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    return lo + half * (x[None, :] + 1.0), half * w[None, :]
