from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from artifact.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, read_config


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def write_cfg(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


PARAMS = dict(h1=0.35, h2=0.45, alpha1=0.5, alpha2=0.8, nu1=1.0, nu2=1.2, rho=0.3, eta12=0.1)
MODEL = dict(h=0.3, sigma0=0.2, eta_vol=1.5, rho=-0.7)


@pytest.fixture
def params(tmp_path):
    return write_cfg(tmp_path / "p.cfg", **PARAMS)


@pytest.fixture
def model_cfg(tmp_path):
    return write_cfg(tmp_path / "m.cfg", **MODEL)


def test_read_config_comments_and_case(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# header\nH = 0.3  # inline\nsigma0=0.2\n")
    assert read_config(p) == {"h": "0.3", "sigma0": "0.2"}


# ---------------------------------------------------------------- cov2fou


def test_cov2fou_ratio_and_manifest(params, tmp_path):
    out = tmp_path / "cov.csv"
    r = run("cov2fou", "--params", params, "--lag", 0.5, "--n", 6, "--out", out)
    assert r.exit_code == EXIT_OK, r.output
    rows = read_csv(out)
    assert len(rows) == 7
    ratio = np.array([float(x["ratio_g12_g21neg"]) for x in rows])
    np.testing.assert_allclose(ratio, 1.0, atol=1e-8)
    man = json.loads((tmp_path / "cov.manifest.json").read_text())
    assert man["command"] == "cov2fou" and len(man["config_hash"]) == 64


def test_cov2fou_independent_components(tmp_path):
    p = write_cfg(tmp_path / "p.cfg", **{**PARAMS, "rho": 0.0, "eta12": 0.0})
    out = tmp_path / "cov.csv"
    assert run("cov2fou", "--params", p, "--lag", 1.0, "--n", 3, "--out", out).exit_code == EXIT_OK
    assert all(abs(float(x["g12"])) < 1e-12 for x in read_csv(out))


def test_cov2fou_incoherent_params(tmp_path):
    p = write_cfg(tmp_path / "p.cfg", **{**PARAMS, "rho": 0.99, "eta12": 0.9})
    r = run("cov2fou", "--params", p, "--out", tmp_path / "cov.csv")
    assert r.exit_code == EXIT_VALIDATION


def test_cov2fou_missing_key(tmp_path):
    p = write_cfg(tmp_path / "p.cfg", h1=0.3)
    assert run("cov2fou", "--params", p, "--out", tmp_path / "c.csv").exit_code == EXIT_VALIDATION


def test_cov2fou_io_errors(params, tmp_path):
    assert run("cov2fou", "--params", tmp_path / "nope.cfg", "--out", tmp_path / "c.csv").exit_code == EXIT_IO
    assert run("cov2fou", "--params", params, "--out", tmp_path / "no" / "c.csv").exit_code == EXIT_IO


# ---------------------------------------------------------------- estimate


@pytest.mark.parametrize(
    "h1,h2,tag",
    [(0.35, 0.35, "sqrt_n"), (0.75, 0.75, "sqrt_n_over_log_n"), (0.85, 0.85, "n_pow_2_minus_H")],
)
def test_estimate_normalization_tag(tmp_path, h1, h2, tag):
    p = write_cfg(tmp_path / "p.cfg", **{**PARAMS, "h1": h1, "h2": h2})
    out = tmp_path / "est.json"
    r = run("estimate", "--params", p, "--n", 128, "--m-paths", 20, "--seed", 3, "--out", out)
    assert r.exit_code == EXIT_OK, r.output
    rep = json.loads(out.read_text())
    assert rep["normalization"] == tag
    assert rep["n_ladder"] == [16, 32, 64, 128]
    assert (tmp_path / "est.manifest.json").exists()


def test_estimate_rejects_small_n(params, tmp_path):
    r = run("estimate", "--params", params, "--n", 10, "--out", tmp_path / "e.json")
    assert r.exit_code == EXIT_VALIDATION


# ---------------------------------------------------------------- rate, smile, skew, moderate


def test_rate_gaussian_case(tmp_path):
    m = write_cfg(tmp_path / "m.cfg", h=0.3, sigma0=0.2, eta_vol=0.0, rho=0.0)
    out = tmp_path / "rate.csv"
    r = run("rate", "--model", m, "--x-grid", "-0.2,0.1,0.3", "--out", out)
    assert r.exit_code == EXIT_OK, r.output
    rows = read_csv(out)
    for row in rows:
        x = float(row["x"])
        assert float(row["J"]) == pytest.approx(x**2 / 0.08, rel=1e-6)
        assert float(row["Sigma"]) == pytest.approx(0.2, rel=1e-6)
    side = json.loads((tmp_path / "rate.json").read_text())
    assert side["expansion"]["J2"] == pytest.approx(25.0)


def test_rate_bad_grid(model_cfg, tmp_path):
    r = run("rate", "--model", model_cfg, "--x-grid", "a,b", "--out", tmp_path / "r.csv")
    assert r.exit_code == EXIT_VALIDATION


def test_invalid_model_values(tmp_path):
    m = write_cfg(tmp_path / "m.cfg", h=0.3, sigma0=-1.0)
    assert run("rate", "--model", m, "--out", tmp_path / "r.csv").exit_code == EXIT_VALIDATION


def test_smile_rerun_is_byte_identical_and_hits_cache(model_cfg, tmp_path):
    args = ("smile", "--model", model_cfg, "--t-list", "0.1", "--x-grid", "-0.1,0,0.1",
            "--m-paths", 500, "--steps", 10)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(*args, "--out", a).exit_code == EXIT_OK
    assert run(*args, "--out", b).exit_code == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    man_a = json.loads((tmp_path / "a.manifest.json").read_text())
    man_b = json.loads((tmp_path / "b.manifest.json").read_text())
    assert man_a["config_hash"] == man_b["config_hash"]
    assert not man_a["metadata"]["rate_cache_hit"]
    assert man_b["metadata"]["rate_cache_hit"]
    assert list(read_csv(a)[0]) == ["t", "x", "k", "mc_price", "mc_stderr", "implied_vol", "sigma_lim"]


def test_skew_runs(model_cfg, tmp_path):
    out = tmp_path / "skew.csv"
    r = run("skew", "--model", model_cfg, "--t-list", "0.1,0.05", "--x", 0.05,
            "--m-paths", 500, "--steps", 10, "--out", out)
    assert r.exit_code == EXIT_OK, r.output
    rows = read_csv(out)
    assert len(rows) == 2 and all(float(x["psi"]) > 0 for x in rows)


def test_skew_numerical_failure(model_cfg, tmp_path):
    # the deep out-of-the-money option has zero Monte Carlo price
    r = run("skew", "--model", model_cfg, "--t-list", "0.01", "--x", 50,
            "--m-paths", 200, "--steps", 10, "--out", tmp_path / "s.csv")
    assert r.exit_code == EXIT_NUMERICAL


def test_moderate_warning_row(tmp_path):
    out = tmp_path / "mod.csv"
    r = run("moderate", "--t-list", "0.1", "--beta", 0.3, "--m-paths", 200, "--steps", 10, "--out", out)
    assert r.exit_code == EXIT_OK, r.output
    row = read_csv(out)[0]
    assert row["warning"] == "beta_outside_window"
    assert row["moderate"] == "nan"
    ok = tmp_path / "ok.csv"
    assert run("moderate", "--t-list", "0.1", "--m-paths", 200, "--steps", 10, "--out", ok).exit_code == EXIT_OK
    assert read_csv(ok)[0]["warning"] == ""


def test_rate_cache_shared_and_extended(model_cfg, tmp_path):
    common = ("--model", model_cfg, "--m-paths", 200, "--steps", 10)
    assert run("rate", "--model", model_cfg, "--x-grid", "-0.05,0.05", "--out", tmp_path / "r.csv").exit_code == 0
    assert run("skew", *common, "--t-list", "0.1", "--x", 0.05, "--out", tmp_path / "s1.csv").exit_code == 0
    assert json.loads((tmp_path / "s1.manifest.json").read_text())["metadata"]["rate_cache_hit"]
    # a new point is computed once, then served from the merged cache
    for name, hit in (("s2", False), ("s3", True)):
        assert run("skew", *common, "--t-list", "0.1", "--x", 0.08, "--out", tmp_path / f"{name}.csv").exit_code == 0
        assert json.loads((tmp_path / f"{name}.manifest.json").read_text())["metadata"]["rate_cache_hit"] is hit
    assert (tmp_path / "s2.csv").read_bytes() == (tmp_path / "s3.csv").read_bytes()
