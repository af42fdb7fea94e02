"""Experiment drivers.

Each experiment is split into independent cells (one data set and its
methods); cells run on a process pool and are aggregated by key, so results
do not depend on the worker count or completion order.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import polygamma

from alssm.alinf import InferenceConfig, al_smoother, exact_al_filter, fast_al_filter
from alssm.bench.io import dumps, read_prices, read_table, write_table
from alssm.bench.metrics import mape, metrics
from alssm.bench.simulate import (
    EXP1_NOISE,
    SVParams,
    exp1_scenario,
    exp2_scenario,
    scenario_model,
    simulate,
    simulate_sv,
)
from alssm.dists import ALParams, NoiseSpec, al_moments
from alssm.errors import ConfigError, DataError, NumericalError, ParameterError
from alssm.learn import LearnConfig, gaussian_em, initial_params, learn, q_objective
from alssm.lingauss import AdaptiveFilterConfig, ModelParams, adaptive_filter, kalman_filter, kalman_smoother

log = logging.getLogger(__name__)

SV_AL_NOISE = ALParams(0.48, 0.8, 0.47)
LOG_CHI2_MEAN = -1.27
LOG_CHI2_VAR = math.pi**2 / 2.0
ZERO_RETURN_FLOOR = 1e-12


# --------------------------------------------------------------------------
# worker pool

def worker_count() -> int:
    env = os.environ.get("ALSSM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ALSSM_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"ALSSM_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _guarded(job):
    fn, key, kwargs = job
    try:
        return key, fn(**kwargs)
    except (NumericalError, ParameterError, np.linalg.LinAlgError) as exc:
        log.warning("cell %s failed: %s", key, exc)
        return key, {"error": f"{type(exc).__name__}: {exc}"}


def run_cells(fn, cells: dict, workers: int | None = None) -> dict:
    """Evaluate ``fn(**kwargs)`` for every ``key -> kwargs``; numerical failures become ``{"error": ...}``."""
    workers = worker_count() if workers is None else workers
    jobs = [(fn, key, cells[key]) for key in sorted(cells)]
    if workers <= 1 or len(jobs) <= 1:
        results = [_guarded(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_guarded, jobs))
    return dict(sorted(results))


def _seeds(config: dict, default: int = 10) -> list[int]:
    s = config.get("seeds", default)
    if isinstance(s, int):
        if s < 1:
            raise ConfigError("seeds must be positive")
        base = int(config.get("seed", 0))
        return [base + i for i in range(s)]
    if not s:
        raise ConfigError("seed list must be non-empty")
    return [int(v) for v in s]


def _learn_config(config: dict, fixed) -> LearnConfig:
    opts = dict(config.get("learn", {}))
    opts.pop("warm_start_iters", None)
    try:
        return LearnConfig(fixed=frozenset(fixed), **opts)
    except TypeError as exc:
        raise ConfigError(f"bad learn options: {exc}") from None


def _noise_spec(entry) -> NoiseSpec:
    if isinstance(entry, str):
        if entry not in EXP1_NOISE:
            raise ConfigError(f"unknown noise preset {entry!r}; expected one of {sorted(EXP1_NOISE)}")
        return EXP1_NOISE[entry]
    try:
        return NoiseSpec.from_dict(entry)
    except (KeyError, TypeError, ParameterError) as exc:
        raise ConfigError(f"bad noise specification {entry!r}: {exc}") from None


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _median(values) -> float:
    v = [x for x in values if x is not None and not (isinstance(x, float) and math.isnan(x))]
    return float(np.median(v)) if v else math.nan


# --------------------------------------------------------------------------
# Experiment I

EXP1_FIXED = frozenset({"A", "C", "b"})


def _handoff(theta: ModelParams, mean: np.ndarray, cov: np.ndarray) -> ModelParams:
    """Parameters for continuing after a segment whose last filtered belief is ``(mean, cov)``."""
    pi1 = theta.A @ mean + theta.b
    S1 = theta.A @ cov @ theta.A.T + theta.Q
    return theta.replace(pi1=pi1, Sigma1=0.5 * (S1 + S1.T))


def fit_and_smooth(y_train, y_eval, theta0: ModelParams, cfg: LearnConfig, gaussian: bool = True) -> dict:
    """Learn on one segment and smooth the next with the AL model and (optionally) a Gaussian model."""
    out = {}
    (theta, trace), t_learn = _timed(learn, y_train, theta0, cfg)
    res_tr, _, _ = al_smoother(theta, y_train)
    theta_eval = _handoff(theta, res_tr.mean[-1], res_tr.cov[-1])
    (res, _, _), t_smooth = _timed(al_smoother, theta_eval, y_eval)
    out["al"] = {
        "theta": theta,
        "mean": res.mean,
        "cpu": t_learn + t_smooth,
        "fb_passes": trace[-1]["fb_passes"] + res.fb_passes,
    }
    if gaussian:
        g_fixed = set(cfg.fixed) & {"A", "C", "b", "Q", "pi1", "Sigma1"}
        R0 = (2.0 * theta0.sigma) ** 2
        fit, t_glearn = _timed(gaussian_em, y_train, theta0, R0, theta0.mu, fixed=g_fixed, tol=cfg.outer_tol,
                               max_iters=cfg.outer_max_iters)
        g_tr = kalman_smoother(fit.theta, y_train, fit.R, fit.m)
        g_eval = _handoff(fit.theta, g_tr.mean[-1], g_tr.cov[-1])
        g_res, t_gs = _timed(kalman_smoother, g_eval, y_eval, fit.R, fit.m)
        out["kalman"] = {
            "theta": fit.theta,
            "R": fit.R,
            "m": fit.m,
            "mean": g_res.mean,
            "cpu": t_glearn + t_gs,
            "fb_passes": len(fit.trace) + 1,
        }
    return out


def exp1_cell(noise: dict, n_y: int, T: int, seed: int, learn_opts: dict, gaussian: bool = True) -> dict:
    spec = NoiseSpec.from_dict(noise)
    sc = exp1_scenario(spec, n_y=n_y, T=T, seeds=[seed])
    x, y = simulate(sc, seed)
    model = scenario_model(sc, seed)
    ytr, yev = y[: sc.T_train], y[sc.T_train :]
    warm = int(learn_opts.get("warm_start_iters", 20))
    theta0 = initial_params(ytr, 2, warm_start_iters=warm, fixed=EXP1_FIXED, A=model.A, C=model.C, b=model.b)
    cfg = _learn_config({"learn": learn_opts}, EXP1_FIXED)
    fits = fit_and_smooth(ytr, yev, theta0, cfg, gaussian=gaussian)
    truth = x[sc.T_train :]
    rows = []
    for method, f in fits.items():
        m = metrics(f["mean"], truth, cpu_seconds=f["cpu"], fb_passes=f["fb_passes"])
        rows.append({"method": method, "rmse": m.rmse, "emax": m.emax, "cpu_seconds": m.cpu_seconds,
                     "fb_passes": m.fb_passes})
    th = fits["al"]["theta"]
    learned = {"mu": th.mu.tolist(), "p": th.p.tolist(), "sigma": th.sigma.tolist()}
    return {"rows": rows, "learned": learned}


def run_experiment1(config: dict, out_dir, fmt: str = "csv", workers: int | None = None) -> dict:
    """Noise-family sweep (AL vs Gaussian smoothing) and the multi-sensor sweep."""
    out_dir = Path(out_dir)
    T = int(config.get("T", 1000))
    if T < 4:
        raise ConfigError("Experiment I needs T >= 4")
    seeds = _seeds(config)
    learn_opts = dict(config.get("learn", {}))
    families = config.get("families", list(EXP1_NOISE))
    cells = {}
    for fam in families:
        spec = _noise_spec(fam)
        for s in seeds:
            cells[("family", spec.family, 1, s)] = {"noise": spec.to_dict(), "n_y": 1, "T": T, "seed": s,
                                                   "learn_opts": learn_opts}
    multi = config.get("multivariate")
    if multi:
        spec = _noise_spec(multi.get("noise", "gh_skew_t"))
        for n_y in multi.get("n_y", list(range(1, 11))):
            for s in seeds:
                cells[("multivariate", spec.family, int(n_y), s)] = {
                    "noise": spec.to_dict(), "n_y": int(n_y), "T": T, "seed": s, "learn_opts": learn_opts,
                    "gaussian": False,
                }
    results = run_cells(exp1_cell, cells, workers)
    metric_rows, learned_rows, failures = [], [], []
    for (sweep, fam, n_y, s), res in results.items():
        if "error" in res:
            failures.append({"sweep": sweep, "family": fam, "n_y": n_y, "seed": s, "error": res["error"]})
            continue
        for r in res["rows"]:
            metric_rows.append({"sweep": sweep, "family": fam, "n_y": n_y, "seed": s, **r})
        if sweep == "family":
            lr = res["learned"]
            learned_rows.append({"family": fam, "seed": s, "mu": lr["mu"][0], "p": lr["p"][0], "sigma": lr["sigma"][0]})
    cols = ["sweep", "family", "n_y", "seed", "method", "rmse", "emax", "fb_passes"]
    files = [write_table(out_dir / "metrics.csv", metric_rows, fmt, cols)]
    files.append(write_table(out_dir / "learned.csv", learned_rows, fmt, ["family", "seed", "mu", "p", "sigma"]))
    files.append(write_table(out_dir / "cpu_times.csv", _cpu_rows(metric_rows), fmt, ["method", "median_cpu_seconds"]))
    if failures:
        files.append(write_table(out_dir / "failures.csv", failures, fmt, ["sweep", "family", "n_y", "seed", "error"]))
    summary = {"families": {}, "multivariate": {}}
    for fam in sorted({r["family"] for r in metric_rows if r["sweep"] == "family"}):
        sub = [r for r in metric_rows if r["sweep"] == "family" and r["family"] == fam]
        summary["families"][fam] = {
            m: _median([r["rmse"] for r in sub if r["method"] == m]) for m in sorted({r["method"] for r in sub})
        }
    for r in metric_rows:
        if r["sweep"] == "multivariate":
            summary["multivariate"].setdefault(str(r["n_y"]), []).append(r["rmse"])
    summary["multivariate"] = {k: _median(v) for k, v in sorted(summary["multivariate"].items(), key=lambda kv: int(kv[0]))}
    (out_dir / "summary.json").write_text(dumps(summary))
    files.append(out_dir / "summary.json")
    return {"files": files, "summary": summary, "rows": metric_rows, "learned": learned_rows, "failures": failures}


def _cpu_rows(metric_rows) -> list[dict]:
    methods = sorted({r["method"] for r in metric_rows})
    return [{"method": m, "median_cpu_seconds": _median([r.get("cpu_seconds") for r in metric_rows if r["method"] == m])}
            for m in methods]


# --------------------------------------------------------------------------
# Experiment II

EXP2_AL_FIXED = frozenset({"A", "C", "b", "Q", "pi1", "Sigma1", "mu"})


def exp2_initial(y) -> ModelParams:
    """Starting point for Experiment II learning: the known random walk, ``mu = 0``, ``p = 0.5``."""
    sc_model = exp2_scenario(T=2).model
    return initial_params(y, 1, A=sc_model.A, C=sc_model.C, b=sc_model.b, Q=sc_model.Q, pi1=sc_model.pi1,
                          Sigma1=sc_model.Sigma1, mu=np.zeros(1))


def exp2_train_cell(T: int, seed: int, index: int, learn_opts: dict) -> dict:
    sc = exp2_scenario(T=T, seeds=[seed])
    _, y = simulate(sc, seed, "train", index)
    theta0 = exp2_initial(y)
    cfg = _learn_config({"learn": learn_opts}, EXP2_AL_FIXED)
    (al, trace), t_al = _timed(learn, y, theta0, cfg)
    lap_cfg = _learn_config({"learn": learn_opts}, EXP2_AL_FIXED | {"p"})
    lap, _ = learn(y, theta0, lap_cfg)
    fit = gaussian_em(y, theta0, (2.0 * theta0.sigma) ** 2, np.zeros(1),
                      fixed={"A", "C", "b", "Q", "pi1", "Sigma1"}, tol=cfg.outer_tol, max_iters=cfg.outer_max_iters)
    return {
        "p": float(al.p[0]),
        "sigma": float(al.sigma[0]),
        "sigma_laplace": float(lap.sigma[0]),
        "R": float(fit.R[0]),
        "m": float(fit.m[0]),
        "em_iterations": len(trace),
        "fb_passes": trace[-1]["fb_passes"],
        "cpu_seconds": t_al,
    }


EXP2_METHODS = ("fast-al", "exact-al", "laplace", "kalman", "adaptive")


def exp2_filters(y, learned: dict, methods=EXP2_METHODS, adaptive: AdaptiveFilterConfig | None = None) -> dict:
    """Filtered means and timings of every method on one test series."""
    base = exp2_scenario(T=2).model
    theta = base.replace(p=np.array([learned["p"]]), sigma=np.array([learned["sigma"]]), mu=np.zeros(1))
    out = {}
    for method in methods:
        if method == "fast-al":
            (res, _), cpu = _timed(fast_al_filter, theta, y)
        elif method == "exact-al":
            res, cpu = _timed(exact_al_filter, theta, y)
        elif method == "laplace":
            lap = theta.replace(p=np.array([0.5]), sigma=np.array([learned["sigma_laplace"]]))
            (res, _), cpu = _timed(fast_al_filter, lap, y)
        elif method == "kalman":
            res, cpu = _timed(kalman_filter, theta, y, learned["R"], learned["m"])
        elif method == "adaptive":
            res, cpu = _timed(adaptive_filter, adaptive or AdaptiveFilterConfig(), theta, y)
        else:
            raise ConfigError(f"unknown filter method {method!r}")
        out[method] = (res, cpu)
    return out


def exp2_test_cell(T: int, seed: int, index: int, learned: dict, methods, adaptive: dict) -> dict:
    sc = exp2_scenario(T=T, seeds=[seed])
    x, y = simulate(sc, seed, "test", index)
    runs = exp2_filters(y, learned, methods, AdaptiveFilterConfig(**adaptive))
    rows = []
    for method, (res, cpu) in runs.items():
        m = metrics(res.filtered_mean, x)
        rows.append({"method": method, "rmse": m.rmse, "emax": m.emax, "cpu_seconds": cpu})
    return {"rows": rows}


def run_experiment2(config: dict, out_dir, fmt: str = "csv", workers: int | None = None) -> dict:
    """Learn AL/Laplace/Gaussian noise models on training sets, then score filters on test sets."""
    out_dir = Path(out_dir)
    T = int(config.get("T", 1000))
    if T < 2:
        raise ConfigError("Experiment II needs T >= 2")
    seed = int(config.get("seed", 0))
    n_train = int(config.get("n_train", 10))
    n_test = int(config.get("n_test", 50))
    if n_train < 1 or n_test < 1:
        raise ConfigError("n_train and n_test must be positive")
    methods = tuple(config.get("methods", EXP2_METHODS))
    adaptive = dict(config.get("adaptive", {}))
    learn_opts = dict(config.get("learn", {}))
    train = run_cells(
        exp2_train_cell,
        {("train", i): {"T": T, "seed": seed, "index": i, "learn_opts": learn_opts} for i in range(n_train)},
        workers,
    )
    ok = [r for r in train.values() if "error" not in r]
    if not ok:
        raise NumericalError("every training cell failed")
    learned = {k: _median([r[k] for r in ok]) for k in ("p", "sigma", "sigma_laplace", "R", "m")}
    test = run_cells(
        exp2_test_cell,
        {("test", i): {"T": T, "seed": seed, "index": i, "learned": learned, "methods": methods, "adaptive": adaptive}
         for i in range(n_test)},
        workers,
    )
    train_rows = [{"split": k[1], **v} for k, v in train.items() if "error" not in v]
    metric_rows, failures = [], []
    for (_, i), res in {**{k: v for k, v in train.items() if "error" in v}, **test}.items():
        if "error" in res:
            failures.append({"cell": f"{_}-{i}", "error": res["error"]})
            continue
        for r in res["rows"]:
            metric_rows.append({"split": i, **r})
    files = [
        write_table(out_dir / "learned.csv", train_rows, fmt,
                    ["split", "p", "sigma", "sigma_laplace", "R", "m", "em_iterations", "fb_passes"]),
        write_table(out_dir / "metrics.csv", metric_rows, fmt, ["split", "method", "rmse", "emax"]),
        write_table(out_dir / "cpu_times.csv", _cpu_rows(metric_rows), fmt, ["method", "median_cpu_seconds"]),
    ]
    if failures:
        files.append(write_table(out_dir / "failures.csv", failures, fmt, ["cell", "error"]))
    summary = {
        "learned": learned,
        "median_rmse": {m: _median([r["rmse"] for r in metric_rows if r["method"] == m]) for m in methods},
        "median_emax": {m: _median([r["emax"] for r in metric_rows if r["method"] == m]) for m in methods},
    }
    (out_dir / "summary.json").write_text(dumps(summary))
    files.append(out_dir / "summary.json")
    return {"files": files, "summary": summary, "rows": metric_rows, "train": train_rows, "failures": failures}


def settled_objective(theta: ModelParams, y, e_lambda0=None, tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """``q_objective`` at ``theta`` with the E-step run to convergence; also returns the settled ``E[lam]``."""
    _, vs, stats = al_smoother(theta, y, InferenceConfig(tol=tol, max_iters=100000), e_lambda0=e_lambda0)
    return q_objective(theta, stats, y), vs.e_lambda


def _iterates(theta0: ModelParams, trace: list[dict]):
    """Rebuild per-iteration parameters from a trace in which only ``p``, ``sigma`` and ``mu`` move."""
    n_y = theta0.n_y
    for entry in trace:
        yield theta0.replace(
            p=np.array([entry[f"p_{i + 1}"] for i in range(n_y)]),
            sigma=np.array([entry[f"sigma_{i + 1}"] for i in range(n_y)]),
            mu=np.array([entry[f"mu_{i + 1}"] for i in range(n_y)]),
        )


def passes_to_reach(theta0: ModelParams, trace: list[dict], y, target: float, tol: float) -> int | None:
    """Cumulative forward-backward passes at the first iterate whose settled objective is within ``tol`` of ``target``."""
    e_lam = None
    for theta, entry in zip(_iterates(theta0, trace), trace):
        q, e_lam = settled_objective(theta, y, e_lam)
        if abs(q - target) <= tol:
            return int(entry["fb_passes"])
    return None


def loop_efficiency_cell(T: int, seed: int, index: int, learn_opts: dict, tol: float = 1e-3) -> dict:
    """Single- vs double-loop EM on one Experiment II training set, both started from the same point.

    Iterates are scored by their settled objective, so the comparison does not depend on how far
    each schedule's own E-step had progressed.
    """
    sc = exp2_scenario(T=T, seeds=[seed])
    _, y = simulate(sc, seed, "train", index)
    theta0 = exp2_initial(y)
    opts = {k: v for k, v in learn_opts.items() if k != "mode"}
    double, d_trace = learn(y, theta0, _learn_config({"learn": {**opts, "mode": "double_loop"}}, EXP2_AL_FIXED))
    single, s_trace = learn(y, theta0, _learn_config({"learn": {**opts, "mode": "single_loop"}}, EXP2_AL_FIXED))
    q_d, _ = settled_objective(double, y)
    q_s, _ = settled_objective(single, y)
    return {
        "q_double": q_d,
        "q_single": q_s,
        "passes_double": passes_to_reach(theta0, d_trace, y, q_d, tol),
        "passes_double_total": d_trace[-1]["fb_passes"],
        "passes_single": passes_to_reach(theta0, s_trace, y, q_d, tol),
        "passes_single_total": s_trace[-1]["fb_passes"],
        "p_double": float(double.p[0]),
        "p_single": float(single.p[0]),
        "sigma_double": float(double.sigma[0]),
        "sigma_single": float(single.sigma[0]),
    }


# --------------------------------------------------------------------------
# stochastic volatility

def log_chi2_moments() -> tuple[float, float, float, float]:
    """Mean and 2nd-4th central moments of ``ln z^2`` for standard normal ``z``."""
    var = float(polygamma(1, 0.5))
    return (
        float(polygamma(0, 0.5) + math.log(2.0)),
        var,
        float(polygamma(2, 0.5)),
        float(polygamma(3, 0.5) + 3.0 * var**2),
    )


def moment_table() -> list[dict]:
    g_var = LOG_CHI2_VAR
    rows = [
        ("log_chi2", *log_chi2_moments()),
        ("AL(0.48,0.8,0.47)", *al_moments(SV_AL_NOISE)),
        ("N(-1.27,pi^2/2)", LOG_CHI2_MEAN, g_var, 0.0, 3.0 * g_var**2),
    ]
    return [{"distribution": r[0], "mean": r[1], "variance": r[2], "mu3": r[3], "mu4": r[4]} for r in rows]


def log_squared_returns(returns) -> np.ndarray:
    """``ln y^2`` of demeaned returns, with zero returns floored in magnitude."""
    r = np.asarray(returns, dtype=float)
    r = r - r.mean()
    return 2.0 * np.log(np.maximum(np.abs(r), ZERO_RETURN_FLOOR))


def _sv_initial(z, noise_mean: float, al: ALParams | None) -> ModelParams:
    level = float(np.mean(z)) - noise_mean
    a0 = 0.9
    al = al or ALParams(0.0, 0.5, 1.0)
    return ModelParams.build(A=[[a0]], C=[[1.0]], Q=[[0.1]], al=al, b=[(1.0 - a0) * level], pi1=[level],
                             Sigma1=[[max(float(np.var(z)) - LOG_CHI2_VAR, 0.1)]])


def fit_sv(z, method: str, learn_opts: dict | None = None) -> dict:
    """Fit the linearized SV model and return smoothed log-variance and the learned dynamics."""
    learn_opts = dict(learn_opts or {})
    if method == "al":
        theta0 = _sv_initial(z, al_moments(SV_AL_NOISE)[0], SV_AL_NOISE)
        cfg = _learn_config({"learn": learn_opts}, {"C", "mu", "p", "sigma"})
        (theta, trace), cpu = _timed(learn, z, theta0, cfg)
        (res, _, _), cpu_s = _timed(al_smoother, theta, z)
        passes = trace[-1]["fb_passes"] + res.fb_passes
    elif method == "gaussian":
        theta0 = _sv_initial(z, LOG_CHI2_MEAN, None)
        opts = {k: v for k, v in learn_opts.items() if k in ("outer_tol", "outer_max_iters")}
        fit, cpu = _timed(gaussian_em, z, theta0, LOG_CHI2_VAR, LOG_CHI2_MEAN, fixed={"C", "R", "m"},
                          tol=opts.get("outer_tol", 1e-5), max_iters=opts.get("outer_max_iters", 500))
        theta = fit.theta
        res, cpu_s = _timed(kalman_smoother, theta, z, LOG_CHI2_VAR, LOG_CHI2_MEAN)
        passes = len(fit.trace) + 1
    else:
        raise ConfigError(f"unknown SV fit method {method!r}")
    h = res.mean[:, 0]
    return {
        "theta": theta,
        "h": h,
        "volatility": np.exp(h / 2.0),
        "phi": float(theta.A[0, 0]),
        "gamma": float(theta.b[0]),
        "sigma_eta": float(math.sqrt(theta.Q[0, 0])),
        "cpu_seconds": cpu + cpu_s,
        "fb_passes": passes,
    }


def sv_synthetic_cell(T: int, seed: int, params: dict, learn_opts: dict) -> dict:
    sv = SVParams(**params)
    h, ret = simulate_sv(sv, T, seed)
    z = log_squared_returns(ret)
    truth = np.exp(h / 2.0)
    rows = []
    for method in ("al", "gaussian"):
        fit = fit_sv(z, method, learn_opts)
        err, skipped = mape(fit["volatility"], truth)
        rows.append({"method": method, "mape": err, "phi": fit["phi"], "gamma": fit["gamma"],
                     "sigma_eta": fit["sigma_eta"], "fb_passes": fit["fb_passes"], "cpu_seconds": fit["cpu_seconds"]})
    return {"rows": rows}


def run_sv(config: dict, out_dir, prices_csv=None, fmt: str = "csv", workers: int | None = None) -> dict:
    """SV volatility extraction from a price file, or a synthetic study when no prices are given."""
    out_dir = Path(out_dir)
    learn_opts = dict(config.get("learn", {}))
    files = [write_table(out_dir / "moments.csv", moment_table(), fmt)]
    prices_csv = prices_csv or config.get("prices")
    if prices_csv:
        dates, prices = read_prices(prices_csv)
        z = log_squared_returns(np.diff(np.log(prices)))
        fits = {m: fit_sv(z, m, learn_opts) for m in ("al", "gaussian")}
        series = {"date": dates[1:], "al": fits["al"]["volatility"], "gaussian": fits["gaussian"]["volatility"]}
        summary = {m: {k: f[k] for k in ("phi", "gamma", "sigma_eta", "fb_passes")} for m, f in fits.items()}
        ref_path = config.get("reference")
        if ref_path:
            ref = _read_reference(ref_path, dates[1:])
            series["reference"] = ref
            for m in fits:
                summary[m]["mape"], summary[m]["mape_skipped"] = mape(fits[m]["volatility"], ref)
        files.append(write_table(out_dir / "volatility.csv", series, fmt))
        rows = [{"method": m, **s} for m, s in summary.items()]
        files.append(write_table(out_dir / "metrics.csv", rows, fmt))
        files.append(write_table(out_dir / "cpu_times.csv",
                                 [{"method": m, "median_cpu_seconds": f["cpu_seconds"]} for m, f in fits.items()], fmt))
    else:
        syn = dict(config.get("synthetic", {}))
        T = int(syn.pop("T", 1000))
        seeds = _seeds(config)
        res = run_cells(sv_synthetic_cell, {("sv", s): {"T": T, "seed": s, "params": syn, "learn_opts": learn_opts}
                                            for s in seeds}, workers)
        rows, failures = [], []
        for (_, s), r in res.items():
            if "error" in r:
                failures.append({"seed": s, "error": r["error"]})
                continue
            rows.extend({"seed": s, **row} for row in r["rows"])
        cols = ["seed", "method", "mape", "phi", "gamma", "sigma_eta", "fb_passes"]
        files.append(write_table(out_dir / "metrics.csv", rows, fmt, cols))
        files.append(write_table(out_dir / "cpu_times.csv", _cpu_rows(rows), fmt, ["method", "median_cpu_seconds"]))
        if failures:
            files.append(write_table(out_dir / "failures.csv", failures, fmt, ["seed", "error"]))
        summary = {m: {"median_mape": _median([r["mape"] for r in rows if r["method"] == m]),
                       "median_phi": _median([r["phi"] for r in rows if r["method"] == m])} for m in ("al", "gaussian")}
    (out_dir / "summary.json").write_text(dumps(summary))
    files.append(out_dir / "summary.json")
    return {"files": files, "summary": summary}


def _read_reference(path, dates) -> np.ndarray:
    import csv

    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "volatility"]:
            raise DataError(f"{path}:1: expected header 'date,volatility'")
        ref = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                ref[row[0].strip()] = float(row[1])
            except (IndexError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed row") from None
    missing = [d for d in dates if d not in ref]
    if missing:
        raise DataError(f"{path}: no reference volatility for {len(missing)} return dates (first: {missing[0]})")
    return np.array([ref[d] for d in dates])


__all__ = [
    "run_cells",
    "run_experiment1",
    "run_experiment2",
    "run_sv",
    "worker_count",
    "fit_sv",
    "moment_table",
    "log_chi2_moments",
    "log_squared_returns",
    "exp1_cell",
    "exp2_train_cell",
    "exp2_test_cell",
    "exp2_filters",
    "loop_efficiency_cell",
    "passes_to_reach",
    "settled_objective",
    "sv_synthetic_cell",
]
