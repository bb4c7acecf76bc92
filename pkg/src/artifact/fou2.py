"""Bivariate fractional Ornstein-Uhlenbeck model.

Each component Y^i solves dY^i = -alpha_i Y^i dt + nu_i dB^{H_i} for a
bivariate fBm with lag-0 correlation rho and asymmetry eta12, started from its
stationary law.  H denotes H1 + H2 throughout.

Covariances at positive lag s all share one structure:

    Cov(Y^i_0, Y^j_s) = e^{-alpha_j s} C + c * int_0^s e^{-alpha_j (s-u)} g_i(u) du,

with g_i(u) = int_0^inf e^{-alpha_i w} (u + w)^{h-2} dw.  The inner integral has
the closed form alpha_i^{1-h} e^{x} Gamma(h-1, x), x = alpha_i u, evaluated by
``_exp_upper_gamma``.  The univariate autocovariance is the special case
h = 2 H_i, rho = 1, eta = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma as G, log, pi, sin, cos

import numpy as np
from scipy import integrate, special
from scipy.linalg import toeplitz
from scipy.signal import lfilter

from ._quadrature import gauss_legendre01
from .kernels import cholesky_factor, draw_normals

H1_TOL = 1e-6


@dataclass(frozen=True)
class Fou2Params:
    H1: float
    H2: float
    alpha1: float
    alpha2: float
    nu1: float
    nu2: float
    rho: float
    eta12: float

    def __post_init__(self):
        for name in ("H1", "H2"):
            h = getattr(self, name)
            if not 0.0 < h < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("mean reversion rates must be positive")
        if self.nu1 <= 0 or self.nu2 <= 0:
            raise ValueError("scales must be positive")
        if self.rho**2 > 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    @property
    def H(self) -> float:
        return self.H1 + self.H2

    @property
    def is_h1(self) -> bool:
        return abs(self.H - 1.0) < H1_TOL

    def alpha(self, i: int) -> float:
        return self.alpha1 if i == 1 else self.alpha2

    def nu(self, i: int) -> float:
        return self.nu1 if i == 1 else self.nu2

    def hurst(self, i: int) -> float:
        return self.H1 if i == 1 else self.H2

    def eta(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return self.eta12 if (i, j) == (1, 2) else -self.eta12

    def swapped(self) -> "Fou2Params":
        return Fou2Params(
            self.H2, self.H1, self.alpha2, self.alpha1, self.nu2, self.nu1, self.rho, -self.eta12
        )

    @classmethod
    def from_mapping(cls, m) -> "Fou2Params":
        get = lambda k: float(m[k])  # noqa: E731
        return cls(
            get("h1"), get("h2"), get("alpha1"), get("alpha2"),
            get("nu1"), get("nu2"), get("rho"), get("eta12"),
        )


def validate_coherence(p: Fou2Params) -> tuple[bool, float]:
    """Coherence value C12 of the driving bivariate fBm and whether C12 <= 1."""
    H1, H2, H = p.H1, p.H2, p.H
    denom = G(2 * H1 + 1) * G(2 * H2 + 1) * sin(pi * H1) * sin(pi * H2)
    if p.is_h1:
        c12 = (p.rho**2 + pi**2 * p.eta12**2 / 4.0) / denom
    else:
        c12 = (
            G(H + 1) ** 2 / denom
            * (p.rho**2 * sin(pi * H / 2) ** 2 + p.eta12**2 * cos(pi * H / 2) ** 2)
        )
    return bool(c12 <= 1.0 + 1e-12), float(c12)


# ---------------------------------------------------------------- univariate


def fou_stat_var(H: float, alpha: float, nu: float) -> float:
    return nu**2 * G(2 * H + 1) / (2.0 * alpha ** (2 * H))


def fou_autocov(H: float, alpha: float, nu: float, s: float) -> float:
    """Stationary autocovariance from the spectral representation, by oscillatory quadrature."""
    s = abs(float(s))
    pref = nu**2 * G(2 * H + 1) * sin(pi * H) / pi
    f = lambda x: x ** (1 - 2 * H) / (alpha**2 + x**2)  # noqa: E731
    if s == 0.0:
        val = integrate.quad(f, 0.0, 1.0, limit=200)[0] + integrate.quad(f, 1.0, np.inf, limit=200)[0]
        return pref * val
    # first cycle holds the x^{1-2H} endpoint singularity; the tail goes to QAWF
    c = pi / s
    head = integrate.quad(f, 0.0, c, weight="cos", wvar=s, limit=400)[0]
    tail = integrate.quad(f, c, np.inf, weight="cos", wvar=s, limlst=200)[0]
    return pref * (head + tail)


# ---------------------------------------------------------------- inner integral


def _exp_upper_gamma(a: float, x):
    """e^x Gamma(a, x) for a in (-1, 1) and x > 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x <= 30.0
    xs, xl = x[small], x[~small]
    if a > 0:
        out[small] = G(a) * special.gammaincc(a, xs) * np.exp(xs)
    elif a == 0:
        out[small] = special.exp1(xs) * np.exp(xs)
    else:
        out[small] = (G(a + 1) * special.gammaincc(a + 1, xs) * np.exp(xs) - xs**a) / a
    # asymptotic series, terms shrink until k ~ x so 40 terms suffice for x > 30
    term = np.ones_like(xl)
    tot = np.ones_like(xl)
    for k in range(1, 40):
        term = term * (a - k) / xl
        tot += term
    out[~small] = xl ** (a - 1) * tot
    return out


def inner_g(h: float, alpha: float, u):
    """int_{-inf}^0 e^{alpha v} (u - v)^{h-2} dv for u > 0, in closed form."""
    u = np.asarray(u, dtype=float)
    return alpha ** (1 - h) * _exp_upper_gamma(h - 1.0, alpha * u)


def inner_g_laguerre(h: float, alpha: float, u, n: int = 64):
    """Gauss-Laguerre evaluation of the same integral; accurate once alpha*u is not small."""
    x, w = special.roots_laguerre(n)
    u = np.asarray(u, dtype=float)[..., None]
    return (w * (u + x / alpha) ** (h - 2)).sum(axis=-1) / alpha


def _conv(h: float, a_out: float, a_in: float, s: float) -> float:
    """int_0^s e^{-a_out (s-u)} g_{a_in}(u) du by adaptive quadrature."""
    if s <= 0:
        return 0.0
    f = lambda u: np.exp(-a_out * (s - u)) * float(inner_g(h, a_in, u))  # noqa: E731
    # the weight is below e^{-60} left of cut; the singular start needs its own piece
    cut = max(0.0, s - 60.0 / a_out)
    pts = sorted({cut, min(s, cut + 1.0 / a_in), s})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, a, b, limit=400, epsabs=0.0, epsrel=1e-12)[0]
    return total


def I_integral(i: int, j: int, s: float, p: Fou2Params) -> float:
    """I_ij(s) = int_0^s e^{alpha_i u} (int_{-inf}^0 e^{alpha_j v} (u-v)^{H-2} dv) du."""
    if s <= 0:
        raise ValueError("s must be positive")
    h = 1.0 if p.is_h1 else p.H
    a_i, a_j = p.alpha(i), p.alpha(j)
    f = lambda u: np.exp(a_i * u) * float(inner_g(h, a_j, u))  # noqa: E731
    return integrate.quad(f, 0.0, s, limit=400, epsabs=0.0, epsrel=1e-12)[0]


# ---------------------------------------------------------------- cross-covariances


def cross_cov_zero(p: Fou2Params) -> float:
    a1, a2, H = p.alpha1, p.alpha2, p.H
    if p.is_h1:
        return p.nu1 * p.nu2 / (a1 + a2) * (p.rho + 0.5 * p.eta12 * log(a2 / a1))
    return (
        G(H + 1) * p.nu1 * p.nu2 / (2 * (a1 + a2))
        * ((a1 ** (1 - H) + a2 ** (1 - H)) * p.rho + (a2 ** (1 - H) - a1 ** (1 - H)) * p.eta12)
    )


def _d_H(p: Fou2Params, i: int, j: int) -> float:
    if p.is_h1:
        return p.eta(i, j) / 2.0
    return p.H * (p.H - 1.0) * (p.rho - p.eta(i, j)) / 2.0


def _orient(s: float) -> tuple[int, int, float]:
    return (1, 2, s) if s >= 0 else (2, 1, -s)


def lag_cov(p: Fou2Params, i: int, j: int, s: float) -> float:
    """Cov(Y^i_0, Y^j_s) for s >= 0 and any i, j in {1, 2}."""
    if s < 0:
        raise ValueError("lag must be nonnegative")
    if i == j:
        Hi = p.hurst(i)
        a, nu = p.alpha(i), p.nu(i)
        v = fou_stat_var(Hi, a, nu)
        if Hi == 0.5:
            return np.exp(-a * s) * v
        return np.exp(-a * s) * v + nu**2 * Hi * (2 * Hi - 1) * _conv(2 * Hi, a, a, s)
    h = 1.0 if p.is_h1 else p.H
    c0 = cross_cov_zero(p)
    a_j = p.alpha(j)
    return np.exp(-a_j * s) * c0 + p.nu1 * p.nu2 * _d_H(p, i, j) * _conv(h, a_j, p.alpha(i), s)


def cross_cov(p: Fou2Params, s: float) -> float:
    """Cov(Y^1_0, Y^2_s) for signed s; negative s is Cov(Y^2_0, Y^1_{|s|})."""
    i, j, a = _orient(float(s))
    return lag_cov(p, i, j, a)


def cross_cov_largelag(p: Fou2Params, s: float, N: int = 2) -> float:
    """Truncated large-lag expansion of Cov(Y^1_t, Y^2_{t+s}) (negative s swaps the roles)."""
    if s == 0:
        raise ValueError("lag must be nonzero")
    if N < 0:
        raise ValueError("N must be nonnegative")
    i, j, s = _orient(float(s))
    a_i, a_j = p.alpha(i), p.alpha(j)
    nn = p.nu1 * p.nu2
    eta_ji = p.eta(j, i)
    if p.is_h1:
        # the 1/(u - v) kernel enters with +eta_ij/2, so the tail carries eta_ij
        eta_ij = -eta_ji
        total = nn * eta_ij / (2 * p.alpha1 * p.alpha2 * s)
        for n in range(1, N + 1):
            coef = (-1) ** n / a_j ** (n + 1) + 1 / a_i ** (n + 1)
            prod = (-1) ** n * G(n + 1)
            total += nn * eta_ij / (2 * (p.alpha1 + p.alpha2)) * coef * prod * s ** (-1 - n)
        return total
    H = p.H
    total = 0.0
    for n in range(N + 1):
        coef = (-1) ** n / a_j ** (n + 1) + 1 / a_i ** (n + 1)
        prod = np.prod([H - k for k in range(n + 2)])
        total += coef * prod * s ** (H - 2 - n)
    return nn * (p.rho + eta_ji) / (2 * (p.alpha1 + p.alpha2)) * total


def cross_cov_shortlag(p: Fou2Params, s: float) -> float:
    """Short-lag expansion of Cov(Y^1_t, Y^2_{t+s}) through the s^2 and s^{1+H} terms."""
    if s == 0:
        return cross_cov_zero(p)
    i, j, s = _orient(float(s))
    a_i, a_j = p.alpha(i), p.alpha(j)
    c0 = cross_cov_zero(p)
    nn = p.nu1 * p.nu2
    if p.is_h1:
        e = p.eta(i, j) / 2.0
        return (
            c0 - nn * e * s * log(s)
            + (nn * e * (1 - np.euler_gamma - log(a_i)) - a_j * c0) * s
        )
    H = p.H
    D = nn * (p.rho - p.eta(i, j)) / 2.0
    return (
        c0
        - D * s**H
        + (-a_j * c0 + a_i ** (1 - H) * G(H + 1) * D) * s
        + (a_j - a_i) * D / (H + 1) * s ** (1 + H)
        + (a_j**2 / 2 * c0 - 0.5 * D * G(H + 1) * (a_j * a_i ** (1 - H) - a_i ** (2 - H))) * s**2
    )


def bfbm_cross_cov(p: Fou2Params, t, s):
    """Cov(B^{H1}_t, B^{H2}_s) for the driving bivariate fBm (unit marginal scales)."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    rho, eta, H = p.rho, p.eta12, p.H
    if p.is_h1:
        def xlogx(x):
            ax = np.abs(x)
            return np.where(ax > 0, x * np.log(np.where(ax > 0, ax, 1.0)), 0.0)

        out = 0.5 * (
            rho * (np.abs(s) + np.abs(t) - np.abs(s - t))
            + eta * (xlogx(s) - xlogx(t) - xlogx(s - t))
        )
    else:
        out = 0.5 * (
            (rho + np.sign(t) * eta) * np.abs(t) ** H
            + (rho - np.sign(s) * eta) * np.abs(s) ** H
            - (rho - np.sign(s - t) * eta) * np.abs(s - t) ** H
        )
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- lag profiles


def _conv_grid(h: float, a_out: float, a_in: float, step: float, n: int, nodes: int = 24) -> np.ndarray:
    """int_0^{k step} e^{-a_out (k step - u)} g_{a_in}(u) du for k = 0..n, by recursion.

    J_k = e^{-a_out step} J_{k-1} + (integral over the k-th cell); the first
    cell carries the endpoint singularity and uses adaptive quadrature.
    """
    out = np.zeros(n + 1)
    if n == 0:
        return out
    b = np.empty(n)
    b[0] = _conv(h, a_out, a_in, step)
    if n > 1:
        x, w = gauss_legendre01(nodes)
        k = np.arange(1, n)[:, None]
        u = (k + x[None, :]) * step
        vals = inner_g(h, a_in, u) * np.exp(-a_out * step * (1.0 - x))[None, :]
        b[1:] = step * (vals @ w)
    out[1:] = lfilter([1.0], [1.0, -np.exp(-a_out * step)], b)
    return out


@dataclass
class CovProfile:
    """Gamma_ij(s) = Cov(Y^i_0, Y^j_s) on a nonnegative lag grid."""

    lags: np.ndarray
    g11: np.ndarray
    g22: np.ndarray
    g12: np.ndarray
    g21: np.ndarray
    method: str = "quadrature"
    extra: dict = field(default_factory=dict)


def cov_profile(p: Fou2Params, step: float, n: int) -> CovProfile:
    """All four covariance functions at lags k*step, k = 0..n."""
    lags = step * np.arange(n + 1)
    out = {}
    for i in (1, 2):
        Hi, a, nu = p.hurst(i), p.alpha(i), p.nu(i)
        v = fou_stat_var(Hi, a, nu)
        base = np.exp(-a * lags) * v
        if Hi != 0.5:
            base = base + nu**2 * Hi * (2 * Hi - 1) * _conv_grid(2 * Hi, a, a, step, n)
        out[(i, i)] = base
    h = 1.0 if p.is_h1 else p.H
    c0 = cross_cov_zero(p)
    nn = p.nu1 * p.nu2
    for i, j in ((1, 2), (2, 1)):
        a_j = p.alpha(j)
        out[(i, j)] = np.exp(-a_j * lags) * c0 + nn * _d_H(p, i, j) * _conv_grid(h, a_j, p.alpha(i), step, n)
    return CovProfile(lags, out[(1, 1)], out[(2, 2)], out[(1, 2)], out[(2, 1)])


def joint_covariance(p: Fou2Params, step: float, n_points: int, profile: CovProfile | None = None) -> np.ndarray:
    """Covariance of (Y^1_{t_0..t_{N-1}}, Y^2_{t_0..t_{N-1}}) on the grid t_k = k*step."""
    prof = profile or cov_profile(p, step, n_points - 1)
    m = n_points
    c11 = toeplitz(prof.g11[:m])
    c22 = toeplitz(prof.g22[:m])
    # entry (a, b) is Cov(Y^1_{t_a}, Y^2_{t_b}): g12 above the diagonal, g21 below
    c12 = toeplitz(prof.g21[:m], prof.g12[:m])
    return np.block([[c11, c12], [c12.T, c22]])


@dataclass
class Fou2Paths:
    grid: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    seed: int
    jitter: float


def simulate_2fou(
    p: Fou2Params, grid, n_paths: int, seed: int, workers: int = 1, offset: int = 0
) -> Fou2Paths:
    """Exact stationary draws of (Y^1, Y^2) on a uniform grid via Cholesky."""
    g = np.asarray(grid, dtype=float).ravel()
    if g.size > 4096:
        raise ValueError("grid larger than 4096 points")
    ok, c12 = validate_coherence(p)
    if not ok:
        raise ValueError(f"coherence violated (C12={c12:.6g})")
    steps = np.diff(g)
    if g.size > 1 and (np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean()):
        raise ValueError("grid must be uniform and increasing")
    step = steps.mean() if g.size > 1 else 1.0
    cov = joint_covariance(p, step, g.size)
    L, jitter = cholesky_factor(cov)
    del cov
    z = draw_normals(seed, n_paths, L.shape[0], workers, offset) @ L.T
    return Fou2Paths(g, z[:, : g.size], z[:, g.size :], seed, jitter)
