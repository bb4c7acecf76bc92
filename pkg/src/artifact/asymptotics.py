"""Short-maturity asymptotics for fractional stochastic volatility.

The rate function

    J(x) = inf_f  1/2 ||f'||^2 + 1/2 (x - rho int sigma(Kf) f')^2 / (rhobar^2 int sigma^2(Kf))

is computed by the Ritz method: f' is expanded in the Fourier basis
1, sqrt2 cos(2 pi n s), sqrt2 sin(2 pi n s), and (Kf)(t) = int_0^t K_H(t,u) f'(u) du
is tabulated on a midpoint grid.  The fBm kernel K_H is the small-time limit
kernel for the fBm, fOU and log-modulated families alike, so they share one
rate profile builder.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from ._quadrature import tanh_sinh
from .kernels import Family, KernelSpec, _fbm_kernel_ds


@dataclass(frozen=True)
class VolModel:
    kernel: KernelSpec
    sigma0: float
    eta_vol: float = 0.0
    rho: float = 0.0
    sigma_fn: str = "exponential"
    lam: float = 0.0
    floor: float = 1e-8

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.eta_vol < 0:
            raise ValueError("vol-of-vol must be nonnegative")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if self.sigma_fn not in ("exponential", "affine"):
            raise ValueError("sigma_fn must be 'exponential' or 'affine'")

    @property
    def H(self) -> float:
        return self.kernel.H

    @property
    def rhobar(self) -> float:
        return float(np.sqrt(1.0 - self.rho**2))

    def sigma(self, v):
        v = np.asarray(v, dtype=float)
        if self.sigma_fn == "exponential":
            return self.sigma0 * np.exp(0.5 * self.eta_vol * v)
        return np.maximum(self.sigma0 + self.lam * v, self.floor)

    def dsigma(self, v):
        v = np.asarray(v, dtype=float)
        if self.sigma_fn == "exponential":
            return 0.5 * self.eta_vol * self.sigma(v)
        return np.where(self.sigma0 + self.lam * v > self.floor, self.lam, 0.0)

    def derivatives_at_zero(self) -> tuple[float, float, float]:
        """sigma(0), sigma'(0), sigma''(0)."""
        if self.sigma_fn == "exponential":
            e = 0.5 * self.eta_vol
            return self.sigma0, self.sigma0 * e, self.sigma0 * e * e
        return self.sigma0, self.lam, 0.0

    def with_kernel(self, kernel: KernelSpec) -> "VolModel":
        return VolModel(kernel, self.sigma0, self.eta_vol, self.rho, self.sigma_fn, self.lam, self.floor)


# ---------------------------------------------------------------- Ritz discretization


def fourier_basis_dot(N: int, t) -> np.ndarray:
    """Columns e'_1..e'_N at times t: 1, sqrt2 cos(2 pi n t), sqrt2 sin(2 pi n t), ..."""
    t = np.asarray(t, dtype=float)
    cols = [np.ones_like(t)]
    n = 1
    while len(cols) < N:
        cols.append(np.sqrt(2.0) * np.cos(2 * np.pi * n * t))
        if len(cols) < N:
            cols.append(np.sqrt(2.0) * np.sin(2 * np.pi * n * t))
        n += 1
    return np.stack(cols, axis=-1)


@lru_cache(maxsize=32)
def ritz_matrices(H: float, N: int, G: int) -> tuple[np.ndarray, np.ndarray]:
    """(E, F) on G midpoints: E[g, i] = e'_i(t_g), F[g, i] = int_0^{t_g} K_H(t_g, u) e'_i(u) du.

    Self-similarity gives F_i(t) = t^{H+1/2} int_0^1 K_H(1, v) e'_i(t v) dv; the
    v-integral carries endpoint singularities and uses a tanh-sinh rule.
    """
    if N < 1 or G < 2:
        raise ValueError("need N >= 1 and G >= 2")
    t = (np.arange(G) + 0.5) / G
    v, vc, w = tanh_sinh(200)
    k1 = _fbm_kernel_ds(H, vc, v)
    E = fourier_basis_dot(N, t)
    # basis evaluated at t_g * v_q: shape (G, Q, N)
    B = fourier_basis_dot(N, t[:, None] * v[None, :])
    F = t[:, None] ** (H + 0.5) * np.einsum("q,gqn->gn", w * k1, B)
    E.setflags(write=False)
    F.setflags(write=False)
    return E, F


class RitzProblem:
    """Objective and exact gradient of the truncated rate-function functional."""

    def __init__(self, model: VolModel, N: int = 5, G: int = 256):
        if G < 64:
            raise ValueError("grid size G must be at least 64")
        self.model, self.N, self.G = model, N, G
        self.E, self.F = ritz_matrices(float(model.H), int(N), int(G))

    def parts(self, c):
        fdot = self.E @ c
        fhat = self.F @ c
        sig = self.model.sigma(fhat)
        dsig = self.model.dsigma(fhat)
        A = np.mean(sig * fdot)
        B = np.mean(sig**2)
        return fdot, fhat, sig, dsig, A, B

    def value(self, c, x: float) -> float:
        _, _, _, _, A, B = self.parts(c)
        m = self.model
        return 0.5 * c @ c + 0.5 * (x - m.rho * A) ** 2 / (m.rhobar**2 * B)

    def value_and_grad(self, c, x: float):
        fdot, _, sig, dsig, A, B = self.parts(c)
        m = self.model
        G = self.G
        R = x - m.rho * A
        q = m.rhobar**2
        dA = self.F.T @ (dsig * fdot) / G + self.E.T @ sig / G
        dB = self.F.T @ (2.0 * sig * dsig) / G
        val = 0.5 * c @ c + 0.5 * R**2 / (q * B)
        grad = c - m.rho * R * dA / (q * B) - 0.5 * R**2 * dB / (q * B**2)
        return val, grad


@dataclass
class RitzResult:
    x: float
    J: float
    coeffs: np.ndarray
    status: str
    n_starts_ok: int


def energy_J(
    x: float,
    model: VolModel,
    N: int = 5,
    G: int = 256,
    n_perturbed: int = 4,
    seed: int = 0,
    tol: float = 1e-10,
) -> RitzResult:
    """J(x) by Ritz minimization over N Fourier coefficients, best of several starts."""
    if x == 0.0:
        return RitzResult(0.0, 0.0, np.zeros(N), "analytic", 0)
    prob = RitzProblem(model, N, G)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, N], dtype=np.uint64)))
    base = np.zeros(N)
    # leading-order minimizer: f' constant equal to rho x / sigma0
    base[0] = model.rho * x / model.sigma0
    scale = max(abs(x) / model.sigma0, 1e-3)
    starts = [base] + [base + scale * rng.standard_normal(N) for _ in range(n_perturbed)]
    best = None
    ok = 0
    for c0 in starts:
        # far-out starts can overflow exp(eta V); the line search backs off from inf
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.minimize(
                prob.value_and_grad, c0, args=(x,), jac=True, method="BFGS",
                options={"gtol": 1e-12, "maxiter": 2000},
            )
        # BFGS stops with a precision-loss flag once the gradient is at roundoff level
        converged = res.success or np.linalg.norm(res.jac) < 1e-8 * max(1.0, abs(res.fun))
        ok += int(converged)
        if converged and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise RuntimeError(f"Ritz minimization failed from every start at x={x}")
    if best.fun > 0 and best.fun < tol:
        status = "converged-small"
    else:
        status = "converged"
    return RitzResult(float(x), float(best.fun), np.asarray(best.x), status, ok)


@dataclass
class RateProfile:
    model: VolModel
    x: np.ndarray
    J: np.ndarray
    coeffs: np.ndarray
    N: int
    G: int
    status: list = field(default_factory=list)

    def J_at(self, x: float) -> float:
        hit = np.flatnonzero(np.isclose(self.x, x, rtol=0.0, atol=1e-14))
        if hit.size:
            return float(self.J[hit[0]])
        return energy_J(x, self.model, self.N, self.G).J

    @property
    def Sigma(self) -> np.ndarray:
        out = np.full(self.x.shape, self.model.sigma0)
        nz = self.x != 0
        out[nz] = np.abs(self.x[nz]) / np.sqrt(2.0 * self.J[nz])
        return out


def build_rate_profile(model: VolModel, xs, N: int = 5, G: int = 256) -> RateProfile:
    """Tabulate J on xs; the limit kernel depends only on H, whatever the family."""
    xs = np.asarray(xs, dtype=float)
    results = [energy_J(float(x), model, N, G) for x in xs]
    return RateProfile(
        model=model,
        x=xs,
        J=np.array([r.J for r in results]),
        coeffs=np.array([r.coeffs for r in results]),
        N=N,
        G=G,
        status=[r.status for r in results],
    )


_PROFILE_BUILDERS = {Family.FBM: build_rate_profile, Family.FOU: build_rate_profile, Family.LOGFBM: build_rate_profile}


def rate_profile_builder(family: Family | str):
    return _PROFILE_BUILDERS[Family(family)]


def sigma_lim(x: float, profile: RateProfile) -> float:
    """Limiting implied volatility |x| / sqrt(2 J(x))."""
    if x == 0:
        raise ValueError("x = 0 is covered by the expansion, sigma_lim(0) = sigma0")
    J = profile.J_at(x)
    if J <= 0:
        raise ValueError(f"J({x}) = {J} is not positive")
    return abs(x) / np.sqrt(2.0 * J)


def skew_asymptotic(x: float, t: float, profile: RateProfile) -> float:
    """(Sigma(x) - Sigma(-x)) / (2x) * t^{H - 1/2}."""
    if x <= 0 or t <= 0:
        raise ValueError("need x > 0 and t > 0")
    return (sigma_lim(x, profile) - sigma_lim(-x, profile)) / (2 * x) * t ** (profile.model.H - 0.5)


# ---------------------------------------------------------------- energy expansion


@dataclass(frozen=True)
class KernelInnerProducts:
    K1_1: float
    K1sq_1: float
    Kbar1sq_1: float
    K1_Kbar1: float


@lru_cache(maxsize=32)
def kernel_inner_products(H: float, n_nodes: int = 200) -> KernelInnerProducts:
    """<K1,1>, <(K1)^2,1>, <(Kbar1)^2,1>, <K1,Kbar1> for the fBm kernel.

    K1(t) = int_0^t K_H(t,s) ds = k0 t^{H+1/2} by self-similarity, and
    Kbar1(u) = int_u^1 K_H(t,u) dt is tabulated on a tanh-sinh rule.
    """
    v, vc, w = tanh_sinh(n_nodes)
    k0 = float(np.sum(w * _fbm_kernel_ds(H, vc, v)))
    # Kbar1(u) with t = u + (1-u) r, gap (1-u) r
    u, uc = v, vc
    gap = uc[:, None] * v[None, :]
    kbar = uc * np.sum(w[None, :] * _fbm_kernel_ds(H, gap, u[:, None]), axis=1)
    K1u = k0 * u ** (H + 0.5)
    return KernelInnerProducts(
        K1_1=k0 / (H + 1.5),
        K1sq_1=k0**2 / (2 * H + 2),
        Kbar1sq_1=float(np.sum(w * kbar**2)),
        K1_Kbar1=float(np.sum(w * K1u * kbar)),
    )


@dataclass(frozen=True)
class EnergyCoeffs:
    J2: float
    J3: float
    J4: float
    Sigma0: float
    Sigma1: float
    Sigma2_half: float
    inner: KernelInnerProducts

    def J_taylor(self, x):
        x = np.asarray(x, dtype=float)
        return self.J2 * x**2 / 2 + self.J3 * x**3 / 6 + self.J4 * x**4 / 24


def energy_expansion_coeffs(model: VolModel) -> EnergyCoeffs:
    """Second to fourth derivatives of J at 0 and the induced implied-vol expansion."""
    ip = kernel_inner_products(float(model.H))
    s0, s1, s2 = model.derivatives_at_zero()
    r2 = model.rho**2
    a, b, c, d = ip.K1_1, ip.K1sq_1, ip.Kbar1sq_1, ip.K1_Kbar1
    J2 = 1.0 / s0**2
    J3 = -6.0 * model.rho * s1 / s0**4 * a
    J4 = 12.0 * s1**2 / s0**6 * (9 * r2 * a**2 - r2 * b - c - 2 * r2 * d) - 12.0 * s2 / s0**5 * r2 * b
    Sigma1 = model.rho * s1 * a / s0
    Sigma2_half = s1**2 / s0**3 * (-3 * r2 * a**2 + r2 * b / 2 + c / 2 + r2 * d) + s2 / s0**2 * r2 * b / 2
    return EnergyCoeffs(J2, J3, J4, s0, Sigma1, Sigma2_half, ip)


def beta_window(H: float, n: int = 4) -> tuple[float, float]:
    return 2 * H / (n + 1), 2 * H / n


def moderate_smile(x: float, t: float, beta: float, model: VolModel, coeffs: EnergyCoeffs | None = None) -> float:
    """Sigma(0) + Sigma'(0) x t^beta + Sigma''(0)/2 x^2 t^{2 beta}; warns outside the admissible window."""
    if t <= 0:
        raise ValueError("t must be positive")
    lo, hi = beta_window(model.H)
    if not lo < beta <= hi:
        warnings.warn(f"beta={beta} outside ({lo:.6g}, {hi:.6g}]", RuntimeWarning, stacklevel=2)
    ec = coeffs or energy_expansion_coeffs(model)
    tb = t**beta
    return ec.Sigma0 + ec.Sigma1 * x * tb + ec.Sigma2_half * x**2 * tb**2
