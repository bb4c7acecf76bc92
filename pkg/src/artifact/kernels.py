"""Volterra kernels, kernel-induced covariances and exact Gaussian path sampling.

The fBm kernel K_H, the fOU kernel built on top of it and the log-modulated
fBm kernel.  Covariance matrices of (V_{t_1..t_N}, B_{t_1..t_N}) with
V_t = int_0^t K(t,u) dB_u are assembled by quadrature and sampled through a
Cholesky factor with a jitter ladder.  Random draws are keyed by
(seed, path index) so a bundle does not depend on how paths are partitioned.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import integrate, linalg
from scipy.special import gamma, hyp2f1

from ._quadrature import tanh_sinh

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


class Family(str, Enum):
    FBM = "fbm"
    FOU = "fou"
    LOGFBM = "logfbm"


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    H: float
    a: float = 0.0
    p: float = 2.0
    C: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not 0.0 < self.H < 1.0:
            raise ValueError("H must lie in (0, 1)")
        if self.family is Family.FOU and self.a <= 0.0:
            raise ValueError("fOU kernel needs a > 0")
        if self.family is Family.LOGFBM:
            if self.H > 0.5:
                raise ValueError("log-modulated kernel needs H <= 1/2")
            if self.p <= 1.0 or self.C <= 0.0:
                raise ValueError("log-modulated kernel needs p > 1 and C > 0")

    def key(self) -> str:
        return f"{self.family.value}:H={self.H!r}:a={self.a!r}:p={self.p!r}:C={self.C!r}"


def c_H(H: float) -> float:
    return float(np.sqrt(2.0 * H * gamma(1.5 - H) / (gamma(H + 0.5) * gamma(2.0 - 2.0 * H))))


def _check_times(t: float, s: float) -> None:
    if not 0.0 < s < t:
        raise ValueError(f"need 0 < s < t, got s={s}, t={t}")


def fbm_kernel(H: float, t: float, s: float) -> float:
    """K_H(t, s) from its integral representation, inner integral by adaptive quadrature.

    The substitution u = s + (t - s) v^{1/(H+1/2)} absorbs the (u - s)^{H-1/2}
    endpoint factor, leaving a bounded integrand on [0, 1].
    """
    _check_times(t, s)
    if H == 0.5:
        return 1.0
    p = 1.0 / (H + 0.5)
    d = t - s
    inner, _ = integrate.quad(
        lambda v: (s + d * v**p) ** (H - 1.5), 0.0, 1.0, limit=200, epsabs=0.0, epsrel=1e-12
    )
    inner *= d ** (H + 0.5) * p
    return c_H(H) * ((t / s) ** (H - 0.5) * d ** (H - 0.5) - (H - 0.5) * s ** (0.5 - H) * inner)


def fbm_kernel_vec(H: float, t, s):
    """Vectorized K_H(t, s) through its Gauss hypergeometric closed form; zero where s >= t."""
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    return _fbm_kernel_ds(H, t - s, s)


def _fbm_kernel_ds(H: float, d, s):
    """K_H(s + d, s) parametrized by the gap d = t - s, which callers may know exactly."""
    d, s = np.broadcast_arrays(np.asarray(d, float), np.asarray(s, float))
    out = np.zeros(d.shape)
    m = (s > 0) & (d > 0)
    if H == 0.5:
        out[m] = 1.0
        return out
    dm, sm = d[m], s[m]
    out[m] = c_H(H) * dm ** (H - 0.5) * hyp2f1(H - 0.5, 0.5 - H, H + 0.5, -dm / sm)
    return out


def _fou_correction(H: float, a: float, d, s, n_nodes: int = 100):
    """int_s^{s+d} e^{-a(s+d-u)} K_H(u, s) du, vectorized, after u = s + d v^{1/(H+1/2)}."""
    d = np.asarray(d, float)[..., None]
    s = np.asarray(s, float)[..., None]
    v, _, w = tanh_sinh(n_nodes)
    p = 1.0 / (H + 0.5)
    vp = v**p
    if H == 0.5:
        f = np.ones_like(vp * d)
    else:
        f = c_H(H) * hyp2f1(H - 0.5, 0.5 - H, H + 0.5, -d * vp / s)
    integrand = np.exp(-a * d * (1.0 - vp)) * f
    return (d[..., 0] ** (H + 0.5)) * p * (integrand @ w)


def fou_kernel(H: float, a: float, t: float, s: float) -> float:
    """K(t, s) = K_H(t, s) - a int_s^t e^{-a(t-u)} K_H(u, s) du, by adaptive quadrature."""
    _check_times(t, s)
    if a < 0:
        raise ValueError("a must be nonnegative")
    base = fbm_kernel(H, t, s)
    if a == 0.0:
        return base
    p = 1.0 / (H + 0.5)
    d = t - s

    def integrand(v: float) -> float:
        vp = v**p
        f = 1.0 if H == 0.5 else c_H(H) * hyp2f1(H - 0.5, 0.5 - H, H + 0.5, -d * vp / s)
        return np.exp(-a * d * (1.0 - vp)) * f

    corr, _ = integrate.quad(integrand, 0.0, 1.0, limit=200, epsabs=0.0, epsrel=1e-12)
    return base - a * d ** (H + 0.5) * p * corr


def fou_kernel_vec(H: float, a: float, t, s):
    """Vectorized fOU kernel; zero where s >= t."""
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    return _fou_kernel_ds(H, a, t - s, s)


def _fou_kernel_ds(H: float, a: float, d, s, chunk: int = 20000):
    d, s = np.broadcast_arrays(np.asarray(d, float), np.asarray(s, float))
    out = _fbm_kernel_ds(H, d, s)
    m = (s > 0) & (d > 0)
    dm, sm = d[m], s[m]
    corr = np.empty(dm.shape)
    for lo in range(0, dm.size, chunk):
        corr[lo : lo + chunk] = _fou_correction(H, a, dm[lo : lo + chunk], sm[lo : lo + chunk])
    out[m] -= a * corr
    return out


def logfbm_kernel(H: float, p: float, C: float, t: float, s: float) -> float:
    """C (t-s)^{H-1/2} (-log(t-s))^{-p} on 0 < t - s < 1."""
    _check_times(t, s)
    d = t - s
    if d >= 1.0:
        raise ValueError("log-modulated kernel needs t - s < 1")
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    return C * d ** (H - 0.5) * (-np.log(d)) ** (-p)


def logfbm_kernel_vec(H: float, p: float, C: float, t, s):
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    return _logfbm_kernel_ds(H, p, C, t - s, s)


def _logfbm_kernel_ds(H: float, p: float, C: float, d, s):
    d, s = np.broadcast_arrays(np.asarray(d, float), np.asarray(s, float))
    out = np.zeros(d.shape)
    m = (s > 0) & (d > 0)
    if np.any(d[m] >= 1.0):
        raise ValueError("log-modulated kernel needs t - s < 1")
    out[m] = C * d[m] ** (H - 0.5) * (-np.log(d[m])) ** (-p)
    return out


def kernel_vec(spec: KernelSpec, t, s):
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    return _kernel_ds(spec, t - s, s)


def _kernel_ds(spec: KernelSpec, d, s):
    if spec.family is Family.FBM:
        return _fbm_kernel_ds(spec.H, d, s)
    if spec.family is Family.FOU:
        return _fou_kernel_ds(spec.H, spec.a, d, s)
    return _logfbm_kernel_ds(spec.H, spec.p, spec.C, d, s)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float).ravel()
    if g.size == 0 or g[0] <= 0.0 or np.any(np.diff(g) <= 0.0):
        raise ValueError("grid must be strictly increasing and positive")
    return g


def covariance_blocks(kernel: KernelSpec, grid, n_nodes: int = 100) -> np.ndarray:
    """(2N)x(2N) covariance of (V_{t_1..t_N}, B_{t_1..t_N}) with V_t = int_0^t K(t,u) dB_u.

    Each cell [t_{m-1}, t_m] (t_0 = 0) gets its own double-exponential rule, so
    the kernel singularities at u = 0 and u = t_i always sit on cell endpoints.
    """
    g = _check_grid(grid)
    n = g.size
    x, xc, w = tanh_sinh(n_nodes)
    left = np.concatenate(([0.0], g[:-1]))
    h = g - left
    u = left[:, None] + h[:, None] * x[None, :]
    wu = h[:, None] * w[None, :]
    u_flat, w_flat = u.ravel(), wu.ravel()
    cell = np.repeat(np.arange(n), x.size)
    kmat = np.zeros((n, u_flat.size))
    xc_flat = np.tile(xc, n)
    for i in range(n):
        m = cell <= i
        # on the diagonal cell the gap t_i - u is h_i (1 - x), taken from the exact complement
        d = np.where(cell[m] == i, h[i] * xc_flat[m], g[i] - u_flat[m])
        kmat[i, m] = _kernel_ds(kernel, d, u_flat[m])
    kw = kmat * w_flat[None, :]
    cvv = kw @ kmat.T
    # cell-wise integrals of K(t_i, .) accumulated over cells give Cov(V_{t_i}, B_{t_j})
    cell_int = np.add.reduceat(kw, np.arange(0, u_flat.size, x.size), axis=1)
    cvb = np.cumsum(cell_int, axis=1)
    cbb = np.minimum.outer(g, g)
    cov = np.block([[cvv, cvb], [cvb.T, cbb]])
    return 0.5 * (cov + cov.T)


def cholesky_factor(cov) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of cov + jitter I, walking the jitter ladder (scaled by trace/N)."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    tol = 1e-12 * max(1.0, float(np.abs(cov).max()))
    # row blocks keep the temporaries small for large matrices
    for lo in range(0, cov.shape[0], 512):
        if np.abs(cov[lo : lo + 512] - cov[:, lo : lo + 512].T).max() > tol:
            raise ValueError("covariance must be symmetric")
    scale = np.trace(cov) / cov.shape[0]
    diag = np.diag_indices(cov.shape[0])
    for j in JITTER_LADDER:
        jitter = j * scale
        work = cov.copy()
        work[diag] += jitter
        try:
            return linalg.cholesky(work, lower=True, overwrite_a=True, check_finite=False), jitter
        except linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("covariance not positive definite at maximum jitter")


def path_normals(seed: int, path_index: int, size: int) -> np.ndarray:
    """Standard normals for one path from a Philox stream keyed by (seed, path_index)."""
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(size)


def draw_normals(seed: int, n_paths: int, size: int, workers: int = 1, offset: int = 0) -> np.ndarray:
    """Stack of per-path normal vectors; identical for any worker count."""
    out = np.empty((n_paths, size))

    def fill(block):
        for k in block:
            out[k] = path_normals(seed, offset + k, size)

    blocks = np.array_split(np.arange(n_paths), max(1, workers))
    if workers <= 1:
        fill(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    return out


def gaussian_draws(cov, n_paths: int, seed: int, workers: int = 1) -> np.ndarray:
    """Rows are exact N(0, cov + jitter I) samples."""
    L, _ = cholesky_factor(cov)
    xi = draw_normals(seed, n_paths, L.shape[0], workers)
    return xi @ L.T


@dataclass
class PathBundle:
    grid: np.ndarray
    V: np.ndarray
    dB: np.ndarray
    seed: int
    kernel: KernelSpec | None = None
    jitter: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.V.shape != self.dB.shape or self.V.shape[1] != len(self.grid):
            raise ValueError("V, dB and grid dimensions disagree")

    @property
    def B(self) -> np.ndarray:
        return np.cumsum(self.dB, axis=1)

    def to_csv(self, path) -> None:
        B = self.B
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["path_id", "t", "V", "B"])
            for k in range(self.V.shape[0]):
                for j, t in enumerate(self.grid):
                    wr.writerow([k, f"{t:.17g}", f"{self.V[k, j]:.17g}", f"{B[k, j]:.17g}"])

    def save(self, path) -> None:
        meta = json.dumps({"seed": self.seed, "kernel": self.kernel.key() if self.kernel else None})
        np.savez(path, grid=self.grid, V=self.V, dB=self.dB, meta=meta, jitter=self.jitter)


def cholesky_sample(
    cov, n_paths: int, seed: int, grid=None, kernel: KernelSpec | None = None, workers: int = 1
) -> PathBundle:
    """Sample (V, B) from a covariance laid out as in covariance_blocks."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape[0] % 2:
        raise ValueError("covariance must hold V and B blocks of equal size")
    n = cov.shape[0] // 2
    L, jitter = cholesky_factor(cov)
    xi = draw_normals(seed, n_paths, 2 * n, workers)
    z = xi @ L.T
    g = np.arange(1, n + 1, dtype=float) if grid is None else _check_grid(grid)
    B = z[:, n:]
    dB = np.diff(np.concatenate([np.zeros((n_paths, 1)), B], axis=1), axis=1)
    return PathBundle(g, z[:, :n], dB, seed, kernel, jitter)


def cache_key(kernel: KernelSpec, grid, seed: int | None = None) -> str:
    h = hashlib.sha256(np.ascontiguousarray(_check_grid(grid)).tobytes()).hexdigest()[:16]
    raw = f"{kernel.key()}|{h}|{seed}"
    return hashlib.sha256(raw.encode()).hexdigest()[:24]


def cached_covariance_blocks(kernel: KernelSpec, grid, cache_dir=None) -> np.ndarray:
    """covariance_blocks with an optional on-disk .npy cache keyed by (kernel, grid hash)."""
    if cache_dir is None:
        return covariance_blocks(kernel, grid)
    path = Path(cache_dir) / f"cov_{cache_key(kernel, grid)}.npy"
    if path.exists():
        return np.load(path)
    cov = covariance_blocks(kernel, grid)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, cov)
    return cov
