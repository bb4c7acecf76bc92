"""Estimators of (rho, eta12) for the bivariate fOU model and their limit theory.

First kind: method of moments on integer-time observations, inverting the
lag-0 and lag-s cross-covariances.  Second kind: realized cross-products of
increments on a fine grid of mesh Delta_n.  Marginal parameters are known.

The normalized first-kind error is n^r (rho_hat - rho) / sqrt(V1 V2) with
V_i = Var(Y^i_0), and the variance limits below refer to that quantity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict
from math import factorial, gamma as G, log, sqrt

import numpy as np
from scipy import stats

from .fou2 import (
    Fou2Params,
    I_integral,
    bfbm_cross_cov,
    cov_profile,
    cross_cov_zero,
    fou_stat_var,
    joint_covariance,
    simulate_2fou,
)
from .gaussian_core import sample_cumulants

H32_TOL = 1e-9


@dataclass(frozen=True)
class CoefficientSet:
    s: int
    a1: float
    a2: float
    a3: float
    b1: float
    b2: float
    b3: float

    @property
    def a(self) -> tuple[float, float, float]:
        return (self.a1, self.a2, self.a3)

    @property
    def b(self) -> tuple[float, float, float]:
        return (self.b1, self.b2, self.b3)


def first_kind_coeffs(p: Fou2Params, s: int = 1) -> CoefficientSet:
    if s < 1 or int(s) != s:
        raise ValueError("lag s must be a positive integer")
    if p.is_h1:
        raise ValueError("first-kind coefficients are undefined for H = 1")
    s = int(s)
    I12 = I_integral(1, 2, s, p)
    I21 = I_integral(2, 1, s, p)
    c = p.nu1 * p.nu2 * p.H * (p.H - 1.0)
    e1, e2 = np.exp(-p.alpha1 * s), np.exp(-p.alpha2 * s)
    a1 = -(I12 + I21) / (c * I12 * I21)
    b1 = (I12 - I21) / (c * I12 * I21)
    a2 = b2 = 1.0 / (c * e1 * I12)
    a3 = 1.0 / (c * e2 * I21)
    return CoefficientSet(s, a1, a2, a3, b1, b2, -a3)


def _lag_sums(Y1, Y2, s: int, n: int | None):
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    if Y1.shape != Y2.shape:
        raise ValueError("paths must have equal shape")
    m = Y1.shape[-1]
    if n is None:
        n = m - s - 1
    if n < 1 or m < n + s + 1:
        raise ValueError(f"need at least n+s+1 = {n + s + 1} observations, got {m}")
    y1, y2 = Y1[..., 1 : n + 1], Y2[..., 1 : n + 1]
    m0 = (y1 * y2).sum(axis=-1) / n
    m_plus = (Y1[..., 1 + s : n + 1] * Y2[..., 1 : n + 1 - s]).sum(axis=-1) / n
    m_minus = (Y1[..., 1 : n + 1 - s] * Y2[..., 1 + s : n + 1]).sum(axis=-1) / n
    return m0, m_plus, m_minus


def estimate_first_kind(Y1, Y2, s: int, coeffs: CoefficientSet, n: int | None = None):
    """(rho_hat, eta_hat) from observations Y_0..Y_m at integer times; works along the last axis."""
    if coeffs.s != s:
        raise ValueError("coefficients were built for a different lag")
    m0, mp, mm = _lag_sums(Y1, Y2, s, n)
    rho = coeffs.a1 * m0 + coeffs.a2 * mp + coeffs.a3 * mm
    eta = coeffs.b1 * m0 + coeffs.b2 * mp + coeffs.b3 * mm
    return rho, eta


def first_kind_expectation(p: Fou2Params, coeffs: CoefficientSet, n: int) -> tuple[float, float]:
    """Exact E[rho_hat_n], E[eta_hat_n] under the model."""
    s = coeffs.s
    prof = cov_profile(p, float(s), 1)
    c0, g21, g12 = cross_cov_zero(p), prof.g21[1], prof.g12[1]
    w = (n - s) / n
    return (
        coeffs.a1 * c0 + w * (coeffs.a2 * g21 + coeffs.a3 * g12),
        coeffs.b1 * c0 + w * (coeffs.b2 * g21 + coeffs.b3 * g12),
    )


def estimate_second_kind(Y1, Y2, delta: float, p: Fou2Params):
    """(rho_tilde, eta_tilde) from observations at k*delta; eta_tilde is None unless H < 1."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    if Y1.shape != Y2.shape:
        raise ValueError("paths must have equal shape")
    n = Y1.shape[-1] - 1
    if n < 2:
        raise ValueError("need at least three observations")
    norm = p.nu1 * p.nu2 * n * delta**p.H
    rho = (np.diff(Y1, axis=-1) * np.diff(Y2, axis=-1)).sum(axis=-1) / norm
    if p.H >= 1.0:
        return rho, None
    eta = (Y1[..., :-1] * Y2[..., 1:] - Y1[..., 1:] * Y2[..., :-1]).sum(axis=-1) / norm
    return rho, eta


def second_kind_expectation(p: Fou2Params, delta: float) -> float:
    """E[rho_tilde] = (2 C0 - Gamma12(delta) - Gamma21(delta)) / (nu1 nu2 delta^H)."""
    prof = cov_profile(p, delta, 1)
    return (2 * cross_cov_zero(p) - prof.g12[1] - prof.g21[1]) / (p.nu1 * p.nu2 * delta**p.H)


# ---------------------------------------------------------------- normalizations


def normalization_tag(H: float) -> str:
    if abs(H - 1.5) < H32_TOL:
        return "sqrt_n_over_log_n"
    return "sqrt_n" if H < 1.5 else "n_pow_2_minus_H"


def normalization_rate(tag: str, n: int, H: float) -> float:
    if tag == "sqrt_n":
        return sqrt(n)
    if tag == "sqrt_n_over_log_n":
        return sqrt(n / log(n))
    if tag == "n_pow_2_minus_H":
        return n ** (2.0 - H)
    raise ValueError(f"unknown normalization {tag!r}")


# ---------------------------------------------------------------- variance limits


def _summand_acov(p: Fou2Params, coeffs: CoefficientSet, K: int, w=None) -> np.ndarray:
    """gamma_X(k) = Cov(X_0, X_k) for k = 0..K, X_j = sum_m w_m Y^1_{j+u_m} Y^2_{j+v_m}."""
    s = coeffs.s
    w = coeffs.a if w is None else w
    N = K + s + 1
    prof = cov_profile(p, 1.0, N)
    g11 = np.r_[prof.g11[:0:-1], prof.g11]
    g22 = np.r_[prof.g22[:0:-1], prof.g22]
    # Cov(Y^1_0, Y^2_k) for k in [-N, N]
    g12 = np.r_[prof.g21[:0:-1], prof.g12]
    terms = [(w[0], 0, 0), (w[1], s, 0), (w[2], 0, s)]
    k = np.arange(K + 1)
    out = np.zeros(K + 1)
    for c1, u1, v1 in terms:
        for c2, u2, v2 in terms:
            out += c1 * c2 * (
                g11[N + k + u2 - u1] * g22[N + k + v2 - v1]
                + g12[N + k + v2 - u1] * g12[N - (k + u2 - v1)]
            )
    return out


@dataclass(frozen=True)
class VarianceLimit:
    value: float
    tail_bound: float
    K: int

    def __float__(self) -> float:
        return self.value


def asymp_var_first(p: Fou2Params, coeffs: CoefficientSet, K: int = 400) -> VarianceLimit:
    """Limit variance of sqrt(n)(rho_hat - rho)/sqrt(V1 V2) for H < 3/2, truncated at lag K."""
    if p.H >= 1.5:
        raise ValueError("the sqrt(n) regime needs H < 3/2")
    if K < 1:
        raise ValueError("cutoff must be positive")
    V1V2 = fou_stat_var(p.H1, p.alpha1, p.nu1) * fou_stat_var(p.H2, p.alpha2, p.nu2)
    g = _summand_acov(p, coeffs, K)
    value = (g[0] + 2.0 * g[1:].sum()) / V1V2
    # tail: gamma_X(k) ~ C k^{2H-4}; fit C on the last quarter of the lags
    kk = np.arange(max(1, 3 * K // 4), K + 1)
    C = np.max(np.abs(g[kk]) * kk ** (4.0 - 2.0 * p.H)) / V1V2
    tail = 2.0 * C * K ** (2.0 * p.H - 3.0) / (3.0 - 2.0 * p.H)
    return VarianceLimit(float(value), float(tail), K)


def _coarse_constant(p: Fou2Params) -> float:
    """lim k^{4-2H} Cov(Y^1_0 Y^2_0, Y^1_k Y^2_k) / (V1 V2)."""
    H1, H2, H = p.H1, p.H2, p.H
    return (
        (p.rho**2 - p.eta12**2) * H**2 * (H - 1) ** 2 + 4 * H1 * H2 * (2 * H1 - 1) * (2 * H2 - 1)
    ) / (p.alpha1 ** (2 - 2 * H1) * p.alpha2 ** (2 - 2 * H2) * G(2 * H1 + 1) * G(2 * H2 + 1))


def asymp_var_h32(p: Fou2Params, coeffs: CoefficientSet) -> float:
    """Limit variance of sqrt(n / log n)(rho_hat - rho)/sqrt(V1 V2) at H = 3/2."""
    if abs(p.H - 1.5) >= H32_TOL:
        raise ValueError("this limit is for H = 3/2")
    return 2.0 * sum(coeffs.a) ** 2 * _coarse_constant(p)


def noncentral_var_limit(p: Fou2Params, coeffs: CoefficientSet | tuple) -> float:
    """Limit variance of n^{2-H}(rho_hat - rho)/sqrt(V1 V2) for H > 3/2.

    The constant 2 comes from summing the k^{2H-4} tail of the summand
    autocovariance: 2 * int_0^1 (1-x) x^{2H-4} dx = 2 / ((2H-3)(2H-2)).
    """
    if p.H <= 1.5:
        raise ValueError("the non-central regime needs H > 3/2")
    A = sum(coeffs.a if isinstance(coeffs, CoefficientSet) else coeffs)
    H = p.H
    return A**2 * 2.0 * _coarse_constant(p) / ((2 * H - 3) * (2 * H - 2))


def asymp_var_second(p: Fou2Params, K: int = 200_000) -> float:
    """Limit variance of sqrt(n)(rho_tilde - rho) from unit-step bivariate fBm increments."""
    if p.H >= 1.5:
        raise ValueError("the sqrt(n) regime needs H < 3/2")
    k = np.arange(-K, K + 1, dtype=float)

    def fgn(h, k):
        return 0.5 * (np.abs(k + 1) ** (2 * h) + np.abs(k - 1) ** (2 * h) - 2 * np.abs(k) ** (2 * h))

    c = lambda t, s: bfbm_cross_cov(p, t, s)  # noqa: E731
    # Cov(B^1_1 - B^1_0, B^2_{k+1} - B^2_k) and its mirror
    g12 = c(1.0, k + 1) - c(1.0, k) - c(0.0, k + 1) + c(0.0, k)
    g21 = c(1.0, -k + 1) - c(1.0, -k) - c(0.0, -k + 1) + c(0.0, -k)
    return float(np.sum(fgn(p.H1, k) * fgn(p.H2, k) + g12 * g21))


# ---------------------------------------------------------------- cumulants


def z_kernel(p: Fou2Params, i: int, j: int, x, y):
    """Rescaled long-lag correlation of (Y^i at time x, Y^j at time y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.abs(x - y)
    if i == j:
        h = p.hurst(i)
        a = p.alpha(i)
        return 2.0 * h * (2 * h - 1) / (a ** (2 - 2 * h) * G(2 * h + 1)) * d ** (2 * h - 2)
    H = p.H
    q = H * (H - 1) / (
        p.alpha1 ** (1 - p.H1) * p.alpha2 ** (1 - p.H2) * sqrt(G(2 * p.H1 + 1) * G(2 * p.H2 + 1))
    )
    # Y^1 later than Y^2 carries rho + eta12
    later = (x > y) if (i, j) == (1, 2) else (x < y)
    return q * np.where(later, p.rho + p.eta12, p.rho - p.eta12) * d ** (H - 2)


def admissible_chains(order: int) -> list[tuple[tuple[int, int], ...]]:
    """Index chains ((i_1,j_1),...,(i_p,j_p)) with i_{m+1} != j_m cyclically."""
    out = []
    for js in itertools.product((1, 2), repeat=order):
        out.append(tuple((3 - js[m - 1], js[m]) for m in range(order)))
    return out


def _powerlaw_step(rng, x, beta):
    """Draw d on [-x, 1-x] with density proportional to |d|^{-beta}; return (x + d, density)."""
    L, R = x, 1.0 - x
    mL, mR = L ** (1 - beta), R ** (1 - beta)
    u = rng.random(x.shape) * (mL + mR)
    left = u < mL
    d = np.where(left, -np.power(np.where(left, u, 0.0), 1 / (1 - beta)),
                 np.power(np.where(left, 0.0, u - mL), 1 / (1 - beta)))
    dens = (1 - beta) * np.abs(d) ** (-beta) / (mL + mR)
    return x + d, dens


def cumulant_limit(
    order: int,
    p: Fou2Params,
    coeffs: CoefficientSet | tuple,
    n_samples: int = 400_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Limit of the order-p cumulant of n^{2-H}(rho_hat - rho)/sqrt(V1 V2), with its MC standard error.

    kappa_p = (p-1)!/2 * (a1+a2+a3)^p * sum over admissible chains of the
    cyclic integral of z-kernels on [0,1]^p.  Points are drawn by a chain of
    power-law steps matching the strongest kernel singularity.
    """
    if order not in (2, 3, 4):
        raise ValueError("order must be 2, 3 or 4")
    if p.H <= 1.5:
        raise ValueError("the non-central regime needs H > 3/2")
    A = sum(coeffs.a if isinstance(coeffs, CoefficientSet) else coeffs)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, order], dtype=np.uint64)))
    beta = -min(2 * p.H1 - 2, 2 * p.H2 - 2, p.H - 2)
    xs = [rng.random(n_samples)]
    dens = np.ones(n_samples)
    for _ in range(order - 1):
        x_next, q = _powerlaw_step(rng, xs[-1], beta)
        xs.append(x_next)
        dens *= q
    Z = {(i, j): [z_kernel(p, i, j, xs[m], xs[(m + 1) % order]) for m in range(order)]
         for i in (1, 2) for j in (1, 2)}
    total = np.zeros(n_samples)
    for chain in admissible_chains(order):
        prod = np.ones(n_samples)
        for m, ij in enumerate(chain):
            prod *= Z[ij][m]
        total += prod
    f = total / dens
    pref = factorial(order - 1) / 2.0 * A**order
    return float(pref * f.mean()), float(abs(pref) * f.std(ddof=1) / sqrt(n_samples))


def exact_cumulant(p: Fou2Params, coeffs: CoefficientSet, n: int, order: int, scale: float = 1.0) -> float:
    """Exact cumulant of scale * (1/n) sum_{k=1}^n (a1 Y1_k Y2_k + a2 Y1_{k+s} Y2_k + a3 Y1_k Y2_{k+s}).

    Uses kappa_p(xi^T A xi) = 2^{p-1} (p-1)! tr((A Sigma)^p) for a Gaussian vector xi.
    """
    if order < 2:
        raise ValueError("order must be at least 2")
    s = coeffs.s
    m = n + s + 1
    Sigma = joint_covariance(p, 1.0, m)
    A = np.zeros((2 * m, 2 * m))
    k = np.arange(1, n + 1)
    for w, u, v in ((coeffs.a1, 0, 0), (coeffs.a2, s, 0), (coeffs.a3, 0, s)):
        np.add.at(A, (k + u, m + k + v), 0.5 * w)
    A = A + A.T
    M = (scale / n) * (A @ Sigma)
    if order == 2:
        tr = np.sum(M * M.T)
    elif order == 3:
        tr = np.sum((M @ M) * M.T)
    else:
        P = M
        for _ in range(order - 1):
            P = P @ M
        tr = np.trace(P)
    return float(2 ** (order - 1) * factorial(order - 1) * tr)


# ---------------------------------------------------------------- experiments


@dataclass
class CltConfig:
    params: Fou2Params
    kind: str = "first"
    n_ladder: tuple[int, ...] = (500, 1000, 2000, 4000)
    M: int = 500
    s: int = 1
    gamma: float = 0.6
    seed: int = 0
    workers: int = 1
    var_cutoff: int = 400


@dataclass
class CltReport:
    kind: str
    normalization: str
    n_ladder: list
    sigma2: float | None
    estimates: list
    errors: list
    mean: list
    var: list
    kappa4: list
    ks_stat: float | None
    ks_pvalue: float | None
    var_slope: float
    raw_var: list
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _analytic_sigma2(cfg: CltConfig, tag: str, coeffs: CoefficientSet | None) -> float | None:
    p = cfg.params
    if cfg.kind == "second":
        return asymp_var_second(p) if p.H < 1.5 else None
    if tag == "sqrt_n":
        return asymp_var_first(p, coeffs, cfg.var_cutoff).value
    if tag == "sqrt_n_over_log_n":
        return asymp_var_h32(p, coeffs)
    return noncentral_var_limit(p, coeffs)


def clt_experiment(cfg: CltConfig) -> CltReport:
    """Monte Carlo study of the normalized estimation error over an n-ladder."""
    p = cfg.params
    if cfg.kind not in ("first", "second"):
        raise ValueError("kind must be 'first' or 'second'")
    ladder = sorted(int(n) for n in cfg.n_ladder)
    V1V2 = fou_stat_var(p.H1, p.alpha1, p.nu1) * fou_stat_var(p.H2, p.alpha2, p.nu2)
    if cfg.kind == "first":
        tag = normalization_tag(p.H)
        coeffs = first_kind_coeffs(p, cfg.s)
        n_max = ladder[-1]
        paths = simulate_2fou(p, np.arange(n_max + cfg.s + 1, dtype=float), cfg.M, cfg.seed, cfg.workers)
        ests = [estimate_first_kind(paths.Y1, paths.Y2, cfg.s, coeffs, n=n)[0] for n in ladder]
        errs = [normalization_rate(tag, n, p.H) * (e - p.rho) / sqrt(V1V2) for n, e in zip(ladder, ests)]
    else:
        tag = "sqrt_n"
        coeffs = None
        ests, errs = [], []
        for idx, n in enumerate(ladder):
            delta = n ** (-cfg.gamma)
            grid = delta * np.arange(n + 1)
            paths = simulate_2fou(p, grid, cfg.M, cfg.seed, cfg.workers, offset=idx * cfg.M)
            rho_t, _ = estimate_second_kind(paths.Y1, paths.Y2, delta, p)
            ests.append(rho_t)
            errs.append(sqrt(n) * (rho_t - p.rho))
    sigma2 = _analytic_sigma2(cfg, tag, coeffs)
    raw_var = [float(np.var(e, ddof=1)) for e in ests]
    slope = float(np.polyfit(np.log(ladder), np.log(raw_var), 1)[0])
    last = errs[-1]
    ks_stat = ks_p = None
    if sigma2 is not None and sigma2 > 0:
        ks = stats.kstest(last, "norm", args=(0.0, sqrt(sigma2)))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    return CltReport(
        kind=cfg.kind,
        normalization=tag,
        n_ladder=ladder,
        sigma2=sigma2,
        estimates=[float(v) for v in ests[-1]],
        errors=[float(v) for v in last],
        mean=[float(np.mean(e)) for e in errs],
        var=[float(np.var(e, ddof=1)) for e in errs],
        kappa4=[sample_cumulants(e, 4) for e in errs],
        ks_stat=ks_stat,
        ks_pvalue=ks_p,
        var_slope=slope,
        raw_var=raw_var,
    )
