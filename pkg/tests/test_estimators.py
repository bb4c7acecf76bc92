from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles as O
from artifact.estimators import (
    CltConfig,
    admissible_chains,
    asymp_var_first,
    asymp_var_h32,
    asymp_var_second,
    clt_experiment,
    cumulant_limit,
    estimate_first_kind,
    estimate_second_kind,
    exact_cumulant,
    first_kind_coeffs,
    first_kind_expectation,
    noncentral_var_limit,
    normalization_rate,
    normalization_tag,
    second_kind_expectation,
    z_kernel,
)
from artifact.fou2 import Fou2Params, cross_cov_zero, fou_stat_var, simulate_2fou, validate_coherence

P07 = Fou2Params(0.35, 0.35, 0.5, 0.8, 1.0, 1.0, 0.3, 0.1)
P17 = Fou2Params(0.85, 0.85, 0.8, 1.3, 1.0, 1.5, 0.5, 0.2)


def v1v2(p):
    return fou_stat_var(p.H1, p.alpha1, p.nu1) * fou_stat_var(p.H2, p.alpha2, p.nu2)


def oracle_pair(p, s):
    """Model covariances (C0, Cov(Y1_s, Y2_0), Cov(Y1_0, Y2_s)) from the independent oracles."""
    pr = (p.H1, p.H2, p.alpha1, p.alpha2, p.nu1, p.nu2, p.rho, p.eta12)
    return O.lag0_cross_cov(*pr), O.cross_cov(*pr, -s), O.cross_cov(*pr, s)


# ---------------------------------------------------------------- coefficients


def test_equal_rates_kill_b1():
    p = Fou2Params(0.3, 0.5, 1.2, 1.2, 1.0, 0.7, 0.2, 0.1)
    assert first_kind_coeffs(p, 1).b1 == pytest.approx(0.0, abs=1e-12)


RANDOM_SETS = [
    (0.3, 0.4, 0.7, 1.6, 1.2, 0.8, 0.4, 0.2),
    (0.6, 0.7, 1.0, 0.4, 1.0, 2.0, -0.3, 0.25),
    (0.35, 0.35, 0.5, 0.8, 1.0, 1.0, 0.3, 0.1),
    (0.2, 0.25, 2.0, 0.9, 0.6, 1.4, -0.5, -0.2),
    (0.85, 0.85, 0.8, 1.3, 1.0, 1.5, 0.5, 0.2),
]


@pytest.mark.parametrize("pr", RANDOM_SETS)
@pytest.mark.parametrize("s", [1, 2, 3])
def test_inversion_identity_with_oracle_covariances(pr, s):
    p = Fou2Params(*pr)
    c = first_kind_coeffs(p, s)
    c0, gp, gm = oracle_pair(p, s)
    assert c.a1 * c0 + c.a2 * gp + c.a3 * gm == pytest.approx(p.rho, abs=1e-8)
    assert c.b1 * c0 + c.b2 * gp + c.b3 * gm == pytest.approx(p.eta12, abs=1e-8)


def test_coefficient_guards():
    with pytest.raises(ValueError):
        first_kind_coeffs(P07, 0)
    with pytest.raises(ValueError):
        first_kind_coeffs(Fou2Params(0.5, 0.5, 1, 2, 1, 1, 0.3, 0.1), 1)


# ---------------------------------------------------------------- first kind


def test_zero_paths():
    c = first_kind_coeffs(P07, 1)
    assert estimate_first_kind(np.zeros(20), np.zeros(20), 1, c) == (0.0, 0.0)


def test_length_checks():
    c = first_kind_coeffs(P07, 1)
    with pytest.raises(ValueError):
        estimate_first_kind(np.zeros(10), np.zeros(10), 1, c, n=10)
    with pytest.raises(ValueError):
        estimate_first_kind(np.zeros(10), np.zeros(11), 1, c)
    with pytest.raises(ValueError):
        estimate_first_kind(np.zeros(10), np.zeros(10), 2, c)


@pytest.fixture(scope="module")
def paths07():
    return simulate_2fou(P07, np.arange(2010, dtype=float), 500, seed=31)


def test_first_kind_expectation_matches_monte_carlo(paths07):
    c = first_kind_coeffs(P07, 1)
    n = 200
    rho, eta = estimate_first_kind(paths07.Y1, paths07.Y2, 1, c, n=n)
    er, ee = first_kind_expectation(P07, c, n)
    assert abs(rho.mean() - er) < 3 * rho.std(ddof=1) / math.sqrt(rho.size)
    assert abs(eta.mean() - ee) < 3 * eta.std(ddof=1) / math.sqrt(eta.size)
    # the bias is exactly proportional to 1/n
    b = [(first_kind_expectation(P07, c, m)[0] - P07.rho) * m for m in (100, 1000, 10000)]
    assert b[0] == pytest.approx(b[1], rel=1e-8) and b[1] == pytest.approx(b[2], rel=1e-8)


def test_first_kind_consistency(paths07):
    c = first_kind_coeffs(P07, 1)
    rho, eta = estimate_first_kind(paths07.Y1[:200], paths07.Y2[:200], 1, c, n=2000)
    assert abs(rho.mean() - P07.rho) < 3 * rho.std(ddof=1) / math.sqrt(200)
    assert abs(eta.mean() - P07.eta12) < 3 * eta.std(ddof=1) / math.sqrt(200)


def test_first_kind_shift_invariance(paths07):
    c = first_kind_coeffs(P07, 1)
    a = estimate_first_kind(paths07.Y1[:, :1002], paths07.Y2[:, :1002], 1, c)[0]
    b = estimate_first_kind(paths07.Y1[:, 500:1502], paths07.Y2[:, 500:1502], 1, c)[0]
    se = math.sqrt((a.var(ddof=1) + b.var(ddof=1)) / a.size)
    assert abs(a.mean() - b.mean()) < 3 * se


# ---------------------------------------------------------------- second kind


def test_second_kind_identical_paths():
    p = Fou2Params(0.35, 0.35, 0.7, 0.7, 1.0, 1.0, 1.0, 0.0)
    y = np.random.default_rng(0).standard_normal((3, 50))
    rho, eta = estimate_second_kind(y, y, 0.1, p)
    assert np.all(eta == 0.0) and np.all(rho > 0)


@given(st.integers(0, 1000))
def test_second_kind_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    y1, y2 = rng.standard_normal((2, 40))
    assert estimate_second_kind(y1, y2, 0.05, P07)[1] == -estimate_second_kind(y2, y1, 0.05, P07)[1]


def test_second_kind_eta_restricted():
    p = Fou2Params(0.6, 0.6, 1, 1, 1, 1, 0.3, 0.1)
    assert estimate_second_kind(np.ones(5), np.ones(5), 0.1, p)[1] is None
    with pytest.raises(ValueError):
        estimate_second_kind(np.ones(5), np.ones(5), 0.0, p)


@pytest.mark.parametrize("pr", [RANDOM_SETS[0], RANDOM_SETS[2]])
def test_second_kind_bias_vanishes(pr):
    p = Fou2Params(*pr)
    errs = []
    for d in (1e-1, 1e-2, 1e-3):
        c0, gp, gm = oracle_pair(p, d)
        oracle = (2 * c0 - gp - gm) / (p.nu1 * p.nu2 * d**p.H)
        assert second_kind_expectation(p, d) == pytest.approx(oracle, rel=1e-7)
        errs.append(abs(oracle - p.rho))
    assert errs[0] > errs[1] > errs[2]


def test_second_kind_monte_carlo_mean():
    n = 4000
    d = n**-0.6
    z = simulate_2fou(P07, d * np.arange(n + 1), 200, seed=5)
    rho, _ = estimate_second_kind(z.Y1, z.Y2, d, P07)
    assert abs(rho.mean() - P07.rho) < 3 * rho.std(ddof=1) / math.sqrt(rho.size)


# ---------------------------------------------------------------- normalization


@pytest.mark.parametrize(
    "H, tag", [(0.7, "sqrt_n"), (1.4999, "sqrt_n"), (1.5, "sqrt_n_over_log_n"), (1.5 + 5e-10, "sqrt_n_over_log_n"),
               (1.7, "n_pow_2_minus_H")]
)
def test_normalization_tags(H, tag):
    assert normalization_tag(H) == tag


@given(st.floats(0.01, 1.99))
def test_normalization_consistent(H):
    tag = normalization_tag(H)
    rate = normalization_rate(tag, 1000, H)
    if H < 1.5 - 1e-9:
        assert rate == pytest.approx(math.sqrt(1000))
    elif H > 1.5 + 1e-9:
        assert rate == pytest.approx(1000 ** (2 - H))
    with pytest.raises(ValueError):
        normalization_rate("bogus", 10, H)


# ---------------------------------------------------------------- variances


def test_asymp_var_tail_bound():
    c = first_kind_coeffs(P07, 1)
    v200, v400 = asymp_var_first(P07, c, 200), asymp_var_first(P07, c, 400)
    assert abs(v200.value - v400.value) <= v200.tail_bound
    assert v400.tail_bound < v200.tail_bound


@settings(max_examples=8)
@given(st.floats(0.1, 0.7), st.floats(0.1, 0.7), st.floats(-0.6, 0.6), st.floats(-0.4, 0.4))
def test_asymp_var_positive(H1, H2, rho, eta):
    p = Fou2Params(H1, H2, 0.9, 1.4, 1.0, 1.0, rho, eta)
    assume(abs(p.H - 1) > 0.05 and validate_coherence(p)[0])
    assert asymp_var_first(p, first_kind_coeffs(p, 1), 100).value > 0


def test_asymp_var_independent_components_monte_carlo():
    p = Fou2Params(0.35, 0.35, 0.5, 0.8, 1.0, 1.0, 0.0, 0.0)
    rep = clt_experiment(CltConfig(p, n_ladder=(1000, 2000, 4000), M=500, seed=3))
    var = rep.var[-1]
    se = var * math.sqrt(2 / 499)
    assert abs(var - rep.sigma2) < 3 * se


def test_variance_guards():
    c = first_kind_coeffs(P17, 1)
    with pytest.raises(ValueError):
        asymp_var_first(P17, c)
    with pytest.raises(ValueError):
        asymp_var_second(P17)
    with pytest.raises(ValueError):
        noncentral_var_limit(P07, first_kind_coeffs(P07, 1))
    with pytest.raises(ValueError):
        asymp_var_h32(P07, first_kind_coeffs(P07, 1))


def test_h32_variance_positive():
    p = Fou2Params(0.75, 0.75, 0.8, 1.3, 1.0, 1.0, 0.4, 0.1)
    assert asymp_var_h32(p, first_kind_coeffs(p, 1)) > 0


def test_noncentral_examples():
    p = Fou2Params(0.8, 0.8, 0.8, 1.3, 1.0, 1.0, 0.0, 0.0)
    assert noncentral_var_limit(p, first_kind_coeffs(p, 1)) > 0
    assert noncentral_var_limit(p, (1.0, -0.4, -0.6)) == 0.0


def test_noncentral_limit_matches_exact_finite_n_variance():
    # exact variance from the Gaussian trace formula approaches the limit as n grows
    c = first_kind_coeffs(P17, 1)
    lim = noncentral_var_limit(P17, c)
    scale = lambda n: n ** (2 - P17.H) / math.sqrt(v1v2(P17))  # noqa: E731
    ex = [exact_cumulant(P17, c, n, 2, scale(n)) for n in (250, 500, 1000)]
    assert ex[0] < ex[1] < ex[2] < lim
    assert ex[2] == pytest.approx(lim, rel=0.05)


def test_second_kind_variance_positive():
    assert asymp_var_second(P07, K=20000) > 0


# ---------------------------------------------------------------- cumulants


def test_chains():
    assert len(admissible_chains(2)) == 4
    for chain in admissible_chains(3):
        for m in range(3):
            assert chain[(m + 1) % 3][0] != chain[m][1]


def test_cross_kernels_vanish_without_correlation():
    p = Fou2Params(0.85, 0.85, 0.8, 1.3, 1.0, 1.5, 0.0, 0.0)
    x, y = np.array([0.1, 0.7]), np.array([0.4, 0.2])
    assert np.all(z_kernel(p, 1, 2, x, y) == 0) and np.all(z_kernel(p, 2, 1, x, y) == 0)
    assert cumulant_limit(3, p, first_kind_coeffs(p, 1), n_samples=20000)[0] == 0.0


def test_z_kernel_orientation():
    x, y = np.array([0.7]), np.array([0.2])
    assert z_kernel(P17, 1, 2, x, y) == pytest.approx(z_kernel(P17, 2, 1, y, x))


def test_second_cumulant_is_variance_limit():
    c = first_kind_coeffs(P17, 1)
    val, se = cumulant_limit(2, P17, c, n_samples=200_000)
    assert abs(val - noncentral_var_limit(P17, c)) < 3 * se


@pytest.mark.parametrize("order", [3, 4])
def test_higher_cumulants_match_exact_traces(order):
    c = first_kind_coeffs(P17, 1)
    val, se = cumulant_limit(order, P17, c, n_samples=200_000)
    n = 1000
    ex = exact_cumulant(P17, c, n, order, n ** (2 - P17.H) / math.sqrt(v1v2(P17)))
    assert abs(val - ex) < 3 * se + 0.01 * abs(ex)


def test_fourth_cumulant_positive():
    c = first_kind_coeffs(P17, 1)
    assert P17.rho - P17.eta12 > 0 and P17.rho + P17.eta12 > 0
    assert cumulant_limit(4, P17, c, n_samples=50_000)[0] > 0


def test_cumulant_guards():
    c = first_kind_coeffs(P17, 1)
    with pytest.raises(ValueError):
        cumulant_limit(5, P17, c)
    with pytest.raises(ValueError):
        cumulant_limit(2, P07, first_kind_coeffs(P07, 1))


# ---------------------------------------------------------------- experiment harness


@pytest.fixture(scope="module")
def clt07():
    return clt_experiment(CltConfig(P07, M=500, seed=1))


def test_clt_report_fields(clt07):
    d = clt07.to_dict()
    assert d["normalization"] == "sqrt_n" and len(d["errors"]) == 500
    assert len(d["kappa4"]) == 4 and d["ks_pvalue"] is not None


def test_kappa4_shrinks(clt07):
    k = np.abs(clt07.kappa4)
    sig = clt07.sigma2
    # SE of the fourth cumulant of a Gaussian sample is about sqrt(24/M) sigma^2
    assert k[-1] < k[0] + 3 * math.sqrt(24 / 500) * sig


def test_clt_rejects_kind():
    with pytest.raises(ValueError):
        clt_experiment(CltConfig(P07, kind="third"))
