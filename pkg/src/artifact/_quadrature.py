"""Fixed quadrature rules shared by the vectorized integrators."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import expit


@lru_cache(maxsize=None)
def tanh_sinh(n: int = 100, tmax: float = 4.5) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Double-exponential rule on (0, 1) returning nodes x, complements 1 - x, weights.

    The complement is computed directly so that integrands singular at x = 1
    keep full relative precision near that endpoint.
    """
    t = np.linspace(-tmax, tmax, n)
    h = t[1] - t[0]
    u = 0.5 * np.pi * np.sinh(t)
    x = expit(2.0 * u)
    xc = expit(-2.0 * u)
    w = h * 0.5 * np.pi * np.cosh(t) * expit(2.0 * u) * expit(-2.0 * u) * 2.0
    keep = (x > 0.0) & (xc > 0.0)
    return x[keep], xc[keep], w[keep]


@lru_cache(maxsize=None)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
