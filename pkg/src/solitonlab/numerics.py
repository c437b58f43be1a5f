"""Small numerical helpers shared across modules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.interpolate import PPoly
from scipy.special import roots_jacobi, roots_legendre


def quintic_hermite(x, y, dy, ddy) -> PPoly:
    """Piecewise quintic matching value, slope and curvature at every node."""
    x = np.asarray(x, dtype=float)
    h = np.diff(x)
    y0, y1 = y[:-1], y[1:]
    s0, s1 = dy[:-1] * h, dy[1:] * h
    c0, c1 = ddy[:-1] * h * h, ddy[1:] * h * h
    dy01 = y1 - y0
    a3 = (20 * dy01 - (8 * s1 + 12 * s0) - (3 * c0 - c1)) / 2
    a4 = (-30 * dy01 + (14 * s1 + 16 * s0) + (3 * c0 - 2 * c1)) / 2
    a5 = (12 * dy01 - 6 * (s1 + s0) - (c0 - c1)) / 2
    coeffs = np.stack([a5 / h**5, a4 / h**4, a3 / h**3, c0 / 2 / h**2, dy[:-1], y0])
    return PPoly(coeffs, x)


@lru_cache(maxsize=64)
def legendre_rule(n: int):
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def jacobi_rule(n: int, beta: float):
    """Nodes/weights on [-1, 1] for the symmetric weight (1 - x^2)^beta."""
    x, w = roots_jacobi(n, beta, beta)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(breaks, n: int):
    """Composite Gauss-Legendre nodes and weights over consecutive breakpoints."""
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    x, w = legendre_rule(n)
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def panel_breaks(lo: float, hi: float, width: float, extra=()) -> np.ndarray:
    pts = set(np.arange(lo, hi, width).tolist()) | {lo, hi}
    pts |= {float(e) for e in extra if lo < e < hi}
    return np.array(sorted(pts))
