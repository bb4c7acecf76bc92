"""Monte Carlo option pricing under Volterra-driven stochastic volatility.

The log-price X_t = -1/2 int sigma^2(V) ds + int sigma(V) (rho dB + rhobar dBbar)
is discretized by forward Euler on t_k = k t / N, with (V, B) drawn exactly
from their joint Gaussian law and Bbar independent.  S_0 = 1, zero rates.
All cells of a table share the same normal draws (common random numbers).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .asymptotics import (
    RateProfile,
    VolModel,
    beta_window,
    build_rate_profile,
    energy_expansion_coeffs,
    moderate_smile,
    sigma_lim,
)
from .kernels import KernelSpec, cholesky_factor, covariance_blocks, draw_normals

VOL_LO, VOL_HI, VOL_MAX = 1e-4, 5.0, 20.0


class ImpliedVolOutOfRange(ValueError):
    """Price outside the open no-arbitrage interval."""


class ImpliedVolNotConverged(RuntimeError):
    """Root not bracketed inside the admissible volatility range."""


@dataclass(frozen=True)
class McConfig:
    model: VolModel
    t: float
    N: int = 100
    M: int = 10_000
    seed: int = 0
    workers: int = 1
    rule: str = "ldp"
    beta: float = 0.0

    def __post_init__(self):
        if self.rule not in ("fixed", "ldp", "moderate"):
            raise ValueError("rule must be 'fixed', 'ldp' or 'moderate'")
        if self.N < 2:
            raise ValueError("need at least two time steps")
        if self.M < 100:
            raise ValueError("need at least 100 paths")
        if self.t <= 0:
            raise ValueError("maturity must be positive")

    def moneyness(self, x: float) -> float:
        """Log-strike for the scaling rule: fixed k = x, LDP or moderate."""
        if self.rule == "fixed":
            return float(x)
        if self.rule == "ldp":
            return ldp_moneyness(x, self.t, self.model.H)
        return moderate_moneyness(x, self.t, self.model.H, self.beta)


def ldp_moneyness(x: float, t: float, H: float) -> float:
    return x * t ** (0.5 - H)


def moderate_moneyness(x: float, t: float, H: float, beta: float) -> float:
    return x * t ** (0.5 - H + beta)


@lru_cache(maxsize=16)
def _factor(kernel: KernelSpec, t: float, N: int) -> np.ndarray:
    grid = t * np.arange(1, N + 1) / N
    L, _ = cholesky_factor(covariance_blocks(kernel, grid))
    L.setflags(write=False)
    return L


def simulate_logprice(cfg: McConfig) -> np.ndarray:
    """Terminal Euler log-prices X_t^N, one per path."""
    m, N, t = cfg.model, cfg.N, cfg.t
    L = _factor(m.kernel, float(t), int(N))
    xi = draw_normals(cfg.seed, cfg.M, 3 * N, cfg.workers)
    VB = xi[:, : 2 * N] @ L.T
    V = np.concatenate([np.zeros((cfg.M, 1)), VB[:, : N - 1]], axis=1)
    B = VB[:, N:]
    dB = np.diff(np.concatenate([np.zeros((cfg.M, 1)), B], axis=1), axis=1)
    dBbar = xi[:, 2 * N :] * math.sqrt(t / N)
    sig = m.sigma(V)
    return -0.5 * (t / N) * np.sum(sig**2, axis=1) + np.sum(sig * (m.rho * dB + m.rhobar * dBbar), axis=1)


def _payoff(samples, k: float, kind: str) -> np.ndarray:
    S = np.exp(np.asarray(samples, dtype=float))
    if kind == "call":
        return np.maximum(S - math.exp(k), 0.0)
    if kind == "put":
        return np.maximum(math.exp(k) - S, 0.0)
    raise ValueError("kind must be 'call' or 'put'")


def mc_option_price(samples, k: float, kind: str = "call") -> tuple[float, float]:
    pay = _payoff(samples, k, kind)
    if pay.size == 0:
        raise ValueError("no samples")
    se = float(pay.std(ddof=1) / math.sqrt(pay.size)) if pay.size > 1 else 0.0
    return float(pay.mean()), se


def parity_residual(samples, k: float) -> tuple[float, float]:
    """c - p - (1 - e^k) on common samples, with its standard error."""
    diff = _payoff(samples, k, "call") - _payoff(samples, k, "put") - (1.0 - math.exp(k))
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(diff.size))


def bs_price(sigma: float, t: float, k: float, kind: str = "call") -> float:
    if sigma <= 0 or t <= 0:
        raise ValueError("sigma and t must be positive")
    sd = sigma * math.sqrt(t)
    d1 = (-k + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    if kind == "call":
        return float(norm.cdf(d1) - math.exp(k) * norm.cdf(d2))
    if kind == "put":
        return float(math.exp(k) * norm.cdf(-d2) - norm.cdf(-d1))
    raise ValueError("kind must be 'call' or 'put'")


def bs_vega(sigma: float, t: float, k: float) -> float:
    sd = sigma * math.sqrt(t)
    d1 = (-k + 0.5 * sd * sd) / sd
    return float(norm.pdf(d1) * math.sqrt(t))


def price_bounds(k: float, kind: str) -> tuple[float, float]:
    ek = math.exp(k)
    if kind == "call":
        return max(1.0 - ek, 0.0), 1.0
    return max(ek - 1.0, 0.0), ek


def implied_vol(price: float, t: float, k: float, kind: str = "call") -> float:
    """Black-Scholes implied volatility by Brent's method on [1e-4, 5], widened up to 20."""
    lo, hi = price_bounds(k, kind)
    if not lo < price < hi:
        raise ImpliedVolOutOfRange(f"price {price!r} outside ({lo!r}, {hi!r}) for k={k}")
    f = lambda s: bs_price(s, t, k, kind) - price  # noqa: E731
    a, b = VOL_LO, VOL_HI
    if f(a) > 0:
        raise ImpliedVolNotConverged(f"implied vol below {VOL_LO} for price {price!r}")
    while f(b) < 0:
        if b >= VOL_MAX:
            raise ImpliedVolNotConverged(f"implied vol above {VOL_MAX} for price {price!r}")
        b = min(2 * b, VOL_MAX)
    return float(optimize.brentq(f, a, b, xtol=1e-10, rtol=4 * np.finfo(float).eps, maxiter=200))


def otm_kind(k: float) -> str:
    return "call" if k >= 0 else "put"


def _iv_cell(samples, t: float, k: float):
    """OTM price, its standard error, implied vol and implied-vol standard error."""
    kind = otm_kind(k)
    price, se = mc_option_price(samples, k, kind)
    try:
        iv = implied_vol(price, t, k, kind)
        iv_se = se / bs_vega(iv, t, k)
    except (ImpliedVolOutOfRange, ImpliedVolNotConverged):
        iv, iv_se = float("nan"), float("nan")
    return kind, price, se, iv, iv_se


# ---------------------------------------------------------------- tables


SMILE_COLUMNS = ("t", "x", "k", "mc_price", "mc_stderr", "implied_vol", "sigma_lim")


@dataclass
class SmileTable:
    rows: list = field(default_factory=list)
    iv_stderr: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    columns: tuple = SMILE_COLUMNS

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        write_rows(path, self.columns, self.rows)


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([fmt(v) for v in r])


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def smile_table(
    model: VolModel,
    t_list,
    x_grid,
    N: int = 100,
    M: int = 10_000,
    seed: int = 0,
    profile: RateProfile | None = None,
    workers: int = 1,
) -> SmileTable:
    """Monte Carlo smile at k_t = x t^{1/2-H} next to the limiting smile Sigma(x)."""
    xs = np.asarray(x_grid, dtype=float)
    if profile is None:
        profile = build_rate_profile(model, xs[xs != 0])
    out = SmileTable()
    for t in t_list:
        X = simulate_logprice(McConfig(model, float(t), N, M, seed, workers))
        for x in xs:
            k = ldp_moneyness(x, t, model.H)
            kind, price, se, iv, iv_se = _iv_cell(X, t, k)
            lim = model.sigma0 if x == 0 else sigma_lim(x, profile)
            out.rows.append((float(t), float(x), k, price, se, iv, lim))
            out.iv_stderr.append(iv_se)
            out.kinds.append(kind)
    return out


SKEW_COLUMNS = ("t", "psi", "psi_stderr", "asymptote")


def skew_table(
    model: VolModel,
    t_list,
    x: float = 0.01,
    N: int = 100,
    M: int = 10_000,
    seed: int = 0,
    profile: RateProfile | None = None,
    workers: int = 1,
) -> list[tuple]:
    """Rows (t, Psi_t, stderr, |Sigma(x) - Sigma(-x)|/(2x) t^{H-1/2}) with k_t = x t^{1/2-H}."""
    if x <= 0:
        raise ValueError("x must be positive")
    if profile is None:
        profile = build_rate_profile(model, [-x, x])
    slope = abs(sigma_lim(x, profile) - sigma_lim(-x, profile)) / (2 * x)
    rows = []
    for t in t_list:
        X = simulate_logprice(McConfig(model, float(t), N, M, seed, workers))
        k = ldp_moneyness(x, t, model.H)
        ivp = implied_vol(mc_option_price(X, k, "call")[0], t, k, "call")
        ivm = implied_vol(mc_option_price(X, -k, "put")[0], t, -k, "put")
        # delta method on the common samples for the difference of implied vols
        lin = _payoff(X, k, "call") / bs_vega(ivp, t, k) - _payoff(X, -k, "put") / bs_vega(ivm, t, -k)
        se = float(lin.std(ddof=1) / math.sqrt(lin.size)) / (2 * k)
        psi = abs(ivp - ivm) / (2 * k)
        rows.append((float(t), psi, se, slope * t ** (model.H - 0.5)))
    return rows


MODERATE_COLUMNS = ("t", "x", "ell", "mc_price", "mc_stderr", "implied_vol", "moderate", "warning")
BETA_WARNING = "beta_outside_window"


def moderate_table(
    model: VolModel,
    t_list,
    x: float,
    beta: float,
    N: int = 100,
    M: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> list[tuple]:
    """Monte Carlo implied vols at ell_t = x t^{1/2-H+beta} next to the moderate-deviation formula.

    A beta outside the admissible window keeps the Monte Carlo columns but blanks the
    formula column and tags the row.
    """
    lo, hi = beta_window(model.H)
    ok = lo < beta <= hi
    ec = energy_expansion_coeffs(model) if ok else None
    rows = []
    for t in t_list:
        cfg = McConfig(model, float(t), N, M, seed, workers, rule="moderate", beta=beta)
        X = simulate_logprice(cfg)
        ell = cfg.moneyness(x)
        _, price, se, iv, _ = _iv_cell(X, t, ell)
        formula = moderate_smile(x, t, beta, model, ec) if ok else float("nan")
        rows.append((float(t), float(x), ell, price, se, iv, formula, "" if ok else BETA_WARNING))
    return rows


def euler_gap(cfg: McConfig, k: float) -> float:
    """Implied-vol change when the step count doubles, an empirical discretization-bias gauge."""
    iv = []
    for N in (cfg.N, 2 * cfg.N):
        X = simulate_logprice(McConfig(cfg.model, cfg.t, N, cfg.M, cfg.seed, cfg.workers))
        iv.append(_iv_cell(X, cfg.t, k)[3])
    return iv[1] - iv[0]
