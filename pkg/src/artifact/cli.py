"""Batch command line: covariance profiles, estimator studies, smiles, skews, rate functions.

Every command writes its outputs plus ``<out stem>.manifest.json`` beside them.
Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import configparser
import functools
import hashlib
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import click
import numpy as np
import scipy

from .asymptotics import RateProfile, VolModel, build_rate_profile, energy_expansion_coeffs
from .estimators import CltConfig, clt_experiment
from .fou2 import (
    Fou2Params,
    cov_profile,
    cross_cov,
    cross_cov_largelag,
    cross_cov_shortlag,
    validate_coherence,
)
from .kernels import Family, KernelSpec
from .pricer import (
    MODERATE_COLUMNS,
    SKEW_COLUMNS,
    ImpliedVolNotConverged,
    ImpliedVolOutOfRange,
    moderate_table,
    skew_table,
    smile_table,
    write_rows,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULT_MODEL = {"h": 0.3, "sigma0": 0.2, "eta_vol": 1.5, "rho": -0.7}
DEFAULT_T = (0.05, 0.1, 0.2, 0.3, 0.5)
DEFAULT_X = tuple(np.round(np.linspace(-0.2, 0.2, 21), 12))
MODERATE_MODEL = {"h": 0.3, "sigma0": 0.2, "eta_vol": 0.2, "rho": -0.7}

RATE_G = 256


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- config plumbing


def read_config(path) -> dict:
    """key = value lines; '#' comments allowed, no section header needed."""
    if path is None:
        return {}
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string("[config]\n" + text)
    return {k.lower(): v.strip() for k, v in cp["config"].items()}


def merge(config: dict, flags: dict) -> dict:
    """Flags set on the command line win over the config file."""
    out = dict(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def parse_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse number list {text!r}") from exc


def fou2_params(cfg: dict) -> Fou2Params:
    try:
        return Fou2Params.from_mapping(cfg)
    except KeyError as exc:
        raise ValidationError(f"params file is missing key {exc.args[0]!r}") from exc


def vol_model(cfg: dict, defaults: dict) -> VolModel:
    c = {**defaults, **cfg}
    f = lambda k, d=None: float(c[k]) if k in c else d  # noqa: E731
    if "family" in c:
        family = Family(str(c["family"]).lower())
    elif "p_log" in c or "c_log" in c:
        family = Family.LOGFBM
    elif f("a", 0.0) > 0:
        family = Family.FOU
    else:
        family = Family.FBM
    kernel = KernelSpec(family, f("h"), a=f("a", 0.0), p=f("p_log", 2.0), C=f("c_log", 1.0))
    return VolModel(
        kernel,
        sigma0=f("sigma0"),
        eta_vol=f("eta_vol", 0.0),
        rho=f("rho", 0.0),
        sigma_fn=str(c.get("sigma_fn", "exponential")),
        lam=f("lam", 0.0),
    )


def model_dict(m: VolModel) -> dict:
    k = m.kernel
    return {
        "family": k.family.value, "h": k.H, "a": k.a, "p_log": k.p, "c_log": k.C,
        "sigma0": m.sigma0, "eta_vol": m.eta_vol, "rho": m.rho, "sigma_fn": m.sigma_fn, "lam": m.lam,
    }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def config_hash(command: str, config: dict) -> str:
    blob = json.dumps({"command": command, "config": _jsonable(config)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, command: str, config: dict, seed, outputs, wall: float, extra=None) -> Path:
    path = out.with_name(out.stem + ".manifest.json")
    doc = {
        "command": command,
        "config": _jsonable(config),
        "config_hash": config_hash(command, config),
        "seed": seed,
        "versions": {
            "artifact": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": wall,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        doc["metadata"] = _jsonable(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def guarded(fn):
    """Map failures to the stable exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except (ImpliedVolOutOfRange, ImpliedVolNotConverged, np.linalg.LinAlgError, FloatingPointError,
                ArithmeticError, RuntimeError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (ValidationError, ValueError, KeyError, TypeError) as exc:
            click.echo(f"validation error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(EXIT_IO)
        sys.exit(EXIT_OK)

    return wrapper


def _out_path(out: str) -> Path:
    p = Path(out)
    if not p.parent.exists():
        raise FileNotFoundError(f"output directory {p.parent} does not exist")
    return p


# ---------------------------------------------------------------- rate cache


def _rate_cache_path(out: Path, model: VolModel, N: int) -> Path:
    key = config_hash("rate", {"model": model_dict(model), "N": N, "G": RATE_G})[:16]
    return out.parent / ".artifact_cache" / f"rate_{key}.json"


def profile_to_dict(prof: RateProfile) -> dict:
    return {
        "model": model_dict(prof.model),
        "N": prof.N,
        "G": prof.G,
        "x": prof.x.tolist(),
        "J": prof.J.tolist(),
        "coeffs": prof.coeffs.tolist(),
        "status": list(prof.status),
    }


def profile_from_dict(doc: dict, model: VolModel) -> RateProfile:
    return RateProfile(
        model=model,
        x=np.asarray(doc["x"], dtype=float),
        J=np.asarray(doc["J"], dtype=float),
        coeffs=np.asarray(doc["coeffs"], dtype=float),
        N=int(doc["N"]),
        G=int(doc["G"]),
        status=list(doc["status"]),
    )


def load_or_build_profile(out: Path, model: VolModel, xs, N: int) -> tuple[RateProfile, bool]:
    """Reuse cached J values; missing points are computed and merged back into the cache."""
    xs = [float(x) for x in xs if x != 0]
    path = _rate_cache_path(out, model, N)
    prof = profile_from_dict(json.loads(path.read_text()), model) if path.exists() else None
    have = prof.x if prof is not None else np.empty(0)
    missing = [x for x in xs if not np.isclose(have, x, rtol=0, atol=1e-14).any()]
    if prof is not None and not missing:
        return prof, True
    new = build_rate_profile(model, missing, N, RATE_G)
    if prof is not None:
        new = RateProfile(
            model=model,
            x=np.concatenate([prof.x, new.x]),
            J=np.concatenate([prof.J, new.J]),
            coeffs=np.concatenate([prof.coeffs.reshape(-1, N), new.coeffs.reshape(-1, N)]),
            N=N,
            G=RATE_G,
            status=prof.status + new.status,
        )
    store_profile(out, new)
    return new, False


def store_profile(out: Path, prof: RateProfile) -> Path:
    path = _rate_cache_path(out, prof.model, prof.N)
    path.parent.mkdir(exist_ok=True)
    write_json(path, profile_to_dict(prof))
    return path


# ---------------------------------------------------------------- commands


@click.group()
def main():
    """Bivariate fOU covariances, cross-correlation estimators and rough-volatility smiles."""


@main.command("cov2fou")
@click.option("--params", "params_file", type=click.Path(dir_okay=False), required=True)
@click.option("--lag", type=float, default=None, help="Lag step.")
@click.option("--n", type=int, default=None, help="Number of lag steps.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@guarded
def cov2fou(params_file, lag, n, out):
    """Covariance profile Gamma_ij(s) with expansions and the stationarity ratio."""
    t0 = time.perf_counter()
    cfg = merge(read_config(params_file), {"lag": lag, "n": n})
    p = fou2_params(cfg)
    step, count = float(cfg.get("lag", 0.1)), int(cfg.get("n", 100))
    if step <= 0 or count < 1:
        raise ValidationError("need lag > 0 and n >= 1")
    ok, c12 = validate_coherence(p)
    if not ok:
        raise ValidationError(f"coherence violated: C12 = {c12:.6g} > 1")
    outp = _out_path(out)
    prof = cov_profile(p, step, count)
    rows = []
    for k, s in enumerate(prof.lags):
        # Gamma_21(-s) through the swapped parametrization, an independent route to Gamma_12(s)
        mirror = cross_cov(p.swapped(), -s) if s > 0 else prof.g12[0]
        g12 = prof.g12[k]
        ratio = 1.0 if g12 == 0 and mirror == 0 else g12 / mirror
        large = cross_cov_largelag(p, s) if s > 0 else float("nan")
        rows.append((s, prof.g11[k], prof.g22[k], g12, prof.g21[k], ratio, cross_cov_shortlag(p, s), large))
    write_rows(outp, ("lag", "g11", "g22", "g12", "g21", "ratio_g12_g21neg", "shortlag", "largelag"), rows)
    write_manifest(outp, "cov2fou", cfg, None, [outp], time.perf_counter() - t0, {"C12": c12})


@main.command("estimate")
@click.option("--params", "params_file", type=click.Path(dir_okay=False), required=True)
@click.option("--kind", type=click.Choice(["first", "second"]), default=None)
@click.option("--n", type=int, default=None, help="Largest sample size; the ladder is n/8, n/4, n/2, n.")
@click.option("--m-paths", type=int, default=None)
@click.option("--lag", type=int, default=None, help="Lag s of the first-kind estimator.")
@click.option("--gamma", type=float, default=None, help="Mesh exponent of the second-kind estimator.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@guarded
def estimate(params_file, kind, n, m_paths, lag, gamma, seed, threads, out):
    """Monte Carlo study of the cross-correlation estimators (JSON report)."""
    t0 = time.perf_counter()
    flags = {"kind": kind, "n": n, "m_paths": m_paths, "lag": lag, "gamma": gamma, "seed": seed, "threads": threads}
    cfg = merge(read_config(params_file), flags)
    p = fou2_params(cfg)
    n_max = int(cfg.get("n", 4000))
    if n_max < 64:
        raise ValidationError("n must be at least 64")
    ladder = tuple(n_max // d for d in (8, 4, 2, 1))
    run = CltConfig(
        params=p,
        kind=str(cfg.get("kind", "first")),
        n_ladder=ladder,
        M=int(cfg.get("m_paths", 500)),
        s=int(cfg.get("lag", 1)),
        gamma=float(cfg.get("gamma", 0.6)),
        seed=int(cfg.get("seed", 0)),
        workers=int(cfg.get("threads", 1)),
    )
    outp = _out_path(out)
    report = clt_experiment(run).to_dict()
    report["manifest"] = outp.stem + ".manifest.json"
    write_json(outp, report)
    write_manifest(outp, "estimate", cfg, run.seed, [outp], time.perf_counter() - t0)


def _model_flags(fn):
    for opt in reversed(
        [
            click.option("--model", "model_file", type=click.Path(dir_okay=False), default=None),
            click.option("--seed", type=int, default=None),
            click.option("--m-paths", type=int, default=None),
            click.option("--steps", type=int, default=None),
            click.option("--basis-n", type=int, default=None),
            click.option("--threads", type=int, default=None),
            click.option("--out", required=True, type=click.Path(dir_okay=False)),
        ]
    ):
        fn = opt(fn)
    return fn


def _common(cfg: dict) -> dict:
    return {
        "seed": int(cfg.get("seed", 0)),
        "M": int(cfg.get("m_paths", 10_000)),
        "N": int(cfg.get("steps", 100)),
        "basis_n": int(cfg.get("basis_n", 5)),
        "workers": int(cfg.get("threads", 1)),
    }


@main.command("rate")
@_model_flags
@click.option("--x-grid", default=None, help="Comma-separated x values.")
@guarded
def rate(model_file, seed, m_paths, steps, basis_n, threads, out, x_grid):
    """Rate function J(x) and limiting smile Sigma(x) by the Ritz method."""
    t0 = time.perf_counter()
    cfg = merge(read_config(model_file), {"basis_n": basis_n, "x_grid": x_grid})
    model = vol_model(cfg, DEFAULT_MODEL)
    xs = parse_floats(cfg.get("x_grid", DEFAULT_X))
    c = _common(cfg)
    outp = _out_path(out)
    prof = build_rate_profile(model, xs, c["basis_n"], RATE_G)
    write_rows(outp, ("x", "J", "Sigma"), list(zip(prof.x, prof.J, prof.Sigma)))
    ec = energy_expansion_coeffs(model)
    side = outp.with_suffix(".json")
    write_json(
        side,
        {
            "model": model_dict(model),
            "profile": profile_to_dict(prof),
            "expansion": {k: getattr(ec, k) for k in ("J2", "J3", "J4", "Sigma0", "Sigma1", "Sigma2_half")},
            "manifest": outp.stem + ".manifest.json",
        },
    )
    cache = store_profile(outp, prof)
    write_manifest(outp, "rate", cfg, None, [outp, side, cache], time.perf_counter() - t0)


@main.command("smile")
@_model_flags
@click.option("--t-list", default=None, help="Comma-separated maturities.")
@click.option("--x-grid", default=None, help="Comma-separated x values.")
@guarded
def smile(model_file, seed, m_paths, steps, basis_n, threads, out, t_list, x_grid):
    """Monte Carlo implied-vol smile at k = x t^{1/2-H} with the limiting smile."""
    t0 = time.perf_counter()
    flags = {"seed": seed, "m_paths": m_paths, "steps": steps, "basis_n": basis_n, "threads": threads,
             "t_list": t_list, "x_grid": x_grid}
    cfg = merge(read_config(model_file), flags)
    model = vol_model(cfg, DEFAULT_MODEL)
    ts = parse_floats(cfg.get("t_list", DEFAULT_T))
    xs = parse_floats(cfg.get("x_grid", DEFAULT_X))
    c = _common(cfg)
    outp = _out_path(out)
    prof, cached = load_or_build_profile(outp, model, xs, c["basis_n"])
    tab = smile_table(model, ts, xs, c["N"], c["M"], c["seed"], prof, c["workers"])
    tab.to_csv(outp)
    meta = {"model": model_dict(model), "seed": c["seed"], "M": c["M"], "N": c["N"], "rate_cache_hit": cached,
            "runtime_s": time.perf_counter() - t0}
    write_manifest(outp, "smile", cfg, c["seed"], [outp], time.perf_counter() - t0, meta)


@main.command("skew")
@_model_flags
@click.option("--t-list", default=None, help="Comma-separated maturities.")
@click.option("--x", "x_value", type=float, default=None, help="Scaled log-moneyness x > 0.")
@guarded
def skew(model_file, seed, m_paths, steps, basis_n, threads, out, t_list, x_value):
    """Finite-difference at-the-money skew against its small-time asymptote."""
    t0 = time.perf_counter()
    flags = {"seed": seed, "m_paths": m_paths, "steps": steps, "basis_n": basis_n, "threads": threads,
             "t_list": t_list, "x": x_value}
    cfg = merge(read_config(model_file), flags)
    model = vol_model(cfg, DEFAULT_MODEL)
    ts = parse_floats(cfg.get("t_list", DEFAULT_T))
    x = float(cfg.get("x", 0.01))
    c = _common(cfg)
    outp = _out_path(out)
    prof, cached = load_or_build_profile(outp, model, [-x, x], c["basis_n"])
    rows = skew_table(model, ts, x, c["N"], c["M"], c["seed"], prof, c["workers"])
    write_rows(outp, SKEW_COLUMNS, rows)
    meta = {"model": model_dict(model), "seed": c["seed"], "M": c["M"], "N": c["N"], "rate_cache_hit": cached,
            "runtime_s": time.perf_counter() - t0}
    write_manifest(outp, "skew", cfg, c["seed"], [outp], time.perf_counter() - t0, meta)


@main.command("moderate")
@_model_flags
@click.option("--t-list", default=None, help="Comma-separated maturities.")
@click.option("--x", "x_value", type=float, default=None)
@click.option("--beta", type=float, default=None)
@guarded
def moderate(model_file, seed, m_paths, steps, basis_n, threads, out, t_list, x_value, beta):
    """Moderate-deviation smile at ell = x t^{1/2-H+beta} against Monte Carlo."""
    t0 = time.perf_counter()
    flags = {"seed": seed, "m_paths": m_paths, "steps": steps, "basis_n": basis_n, "threads": threads,
             "t_list": t_list, "x": x_value, "beta": beta}
    cfg = merge(read_config(model_file), flags)
    model = vol_model(cfg, MODERATE_MODEL)
    ts = parse_floats(cfg.get("t_list", DEFAULT_T))
    x = float(cfg.get("x", 0.1))
    b = float(cfg.get("beta", 0.125))
    c = _common(cfg)
    outp = _out_path(out)
    rows = moderate_table(model, ts, x, b, c["N"], c["M"], c["seed"], c["workers"])
    write_rows(outp, MODERATE_COLUMNS, rows)
    meta = {"model": model_dict(model), "seed": c["seed"], "M": c["M"], "N": c["N"], "beta": b,
            "runtime_s": time.perf_counter() - t0}
    write_manifest(outp, "moderate", cfg, c["seed"], [outp], time.perf_counter() - t0, meta)


if __name__ == "__main__":
    main()
