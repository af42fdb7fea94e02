"""Command-line entry point: ``alssm <command> [--config F] [--seed N] [--out DIR] ...``.

Every command writes ``manifest.json`` next to its outputs; ``alssm replay DIR/manifest.json``
re-runs the recorded command into the same directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from alssm.alinf import InferenceConfig, al_smoother, exact_al_filter, fast_al_filter
from alssm.bench import experiments as ex
from alssm.bench.io import (
    dumps,
    load_config,
    prefixed,
    read_params,
    read_table,
    series_table,
    write_manifest,
    write_params,
    write_table,
)
from alssm.bench.simulate import EXP1_NOISE, Scenario, exp1_scenario, exp2_scenario, scenario_model, simulate
from alssm.diag import ScalarPrior, adaptation_curve, response_curve
from alssm.dists import ALParams, NoiseSpec, al_moments
from alssm.errors import ConfigError, NumericalError, ParameterError
from alssm.learn import PARAM_NAMES, LearnConfig, initial_params, learn
from alssm.lingauss import AdaptiveFilterConfig, ModelParams, adaptive_filter, kalman_filter, kalman_smoother

log = logging.getLogger("alssm")

METHODS = ("fast-al", "exact-al", "kalman", "adaptive", "laplace")
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# --------------------------------------------------------------------------
# shared helpers

def _inference(config: dict) -> InferenceConfig:
    try:
        return InferenceConfig(**config.get("inference", {}))
    except TypeError as exc:
        raise ConfigError(f"bad inference options: {exc}") from None


def _observations(path) -> np.ndarray:
    return prefixed(read_table(path), "y")


def _data_path(args, default_name: str) -> Path:
    if args.data:
        return Path(args.data)
    path = Path(args.out) / default_name
    if not path.exists():
        raise ConfigError(f"no --data given and {path} does not exist")
    return path


def _params_path(args, data: Path) -> Path:
    if args.params:
        return Path(args.params)
    for name in ("params.json", "model.json"):
        for folder in (Path(args.out), data.parent):
            if (folder / name).exists():
                return folder / name
    raise ConfigError("no --params given and no params.json/model.json beside the data")


def _gaussian_noise(theta: ModelParams):
    """Per-channel mean and variance of the AL noise, used by the Gaussian methods."""
    moments = [al_moments(a) for a in theta.al]
    return np.array([m[0] for m in moments]), np.array([m[1] for m in moments])


def _laplace(theta: ModelParams, config: dict) -> ModelParams:
    sigma = config.get("laplace_sigma")
    return theta.replace(p=np.full(theta.n_y, 0.5), sigma=theta.sigma if sigma is None else np.full(theta.n_y, float(sigma)))


def _table(out: Path, name: str, table, fmt: str) -> Path:
    return write_table(out / name, table, fmt)


# --------------------------------------------------------------------------
# commands (each returns the list of files it wrote)

def _scenario(config: dict) -> Scenario:
    kind = config.get("scenario", "exp2")
    T = int(config.get("T", 1000))
    if kind == "exp2":
        return exp2_scenario(T=T, r=float(config.get("contamination", 0.01)))
    if kind == "exp1":
        noise = config.get("noise", "asymmetric_laplace")
        spec = ex._noise_spec(noise)
        return exp1_scenario(spec, n_y=int(config.get("n_y", 1)), T=T)
    if kind == "custom":
        try:
            model = ModelParams.from_dict(config["model"])
        except (KeyError, ParameterError) as exc:
            raise ConfigError(f"custom scenario needs a valid 'model': {exc}") from None
        return Scenario(model, ex._noise_spec(config.get("noise", "gaussian")), T)
    raise ConfigError(f"unknown scenario {kind!r}; expected exp1, exp2 or custom")


def cmd_simulate(args, config, out: Path) -> list[Path]:
    sc = _scenario(config)
    x, y = simulate(sc, args.seed)
    model = scenario_model(sc, args.seed)
    if "al" in config:
        al = config["al"]
        try:
            model = model.replace(mu=np.full(model.n_y, float(al["mu"])), p=np.full(model.n_y, float(al["p"])),
                                  sigma=np.full(model.n_y, float(al["sigma"])))
        except (KeyError, TypeError, ParameterError) as exc:
            raise ConfigError(f"bad 'al' block: {exc}") from None
    return [
        _table(out, "states.csv", series_table("x", x), args.format),
        _table(out, "observations.csv", series_table("y", y), args.format),
        write_params(out / "model.json", model),
    ]


def cmd_filter(args, config, out: Path) -> list[Path]:
    data = _data_path(args, "observations.csv")
    y = _observations(data)
    theta = read_params(_params_path(args, data))
    cfg = _inference(config)
    method = args.method
    lam = None
    if method == "fast-al":
        res, vs = fast_al_filter(theta, y, cfg)
        lam = vs.e_lambda
    elif method == "laplace":
        res, vs = fast_al_filter(_laplace(theta, config), y, cfg)
        lam = vs.e_lambda
    elif method == "exact-al":
        res = exact_al_filter(theta, y, cfg)
        lam = res.extras["e_lambda"]
    elif method == "kalman":
        m, R = _gaussian_noise(theta)
        res = kalman_filter(theta, y, R, m)
    else:
        m, _ = _gaussian_noise(theta)
        try:
            acfg = AdaptiveFilterConfig(**config.get("adaptive", {}))
        except TypeError as exc:
            raise ConfigError(f"bad adaptive options: {exc}") from None
        res = adaptive_filter(acfg, theta, y, m)
    files = [_table(out, "filtered.csv", series_table("xhat", res.mean, res.cov), args.format)]
    if lam is not None:
        files.append(_table(out, "lambda.csv", series_table("lambda", lam), args.format))
    return files


def cmd_smooth(args, config, out: Path) -> list[Path]:
    data = _data_path(args, "observations.csv")
    y = _observations(data)
    theta = read_params(_params_path(args, data))
    method = args.method
    lam = None
    if method in ("fast-al", "exact-al", "laplace"):
        th = _laplace(theta, config) if method == "laplace" else theta
        res, vs, _ = al_smoother(th, y, _inference(config))
        lam = vs.e_lambda
    elif method == "kalman":
        m, R = _gaussian_noise(theta)
        res = kalman_smoother(theta, y, R, m)
    else:
        raise ConfigError("the adaptive baseline is a filter only; choose another --method for smoothing")
    files = [_table(out, "smoothed.csv", series_table("xhat", res.mean, res.cov), args.format)]
    if lam is not None:
        files.append(_table(out, "lambda.csv", series_table("lambda", lam), args.format))
    return files


def cmd_learn(args, config, out: Path) -> list[Path]:
    data = _data_path(args, "observations.csv")
    y = _observations(data)
    opts = dict(config.get("learn", {}))
    fixed = frozenset(opts.pop("fixed", []))
    unknown = fixed - set(PARAM_NAMES)
    if unknown:
        raise ConfigError(f"unknown parameter names in 'fixed': {sorted(unknown)}")
    warm = int(opts.pop("warm_start_iters", 0))
    if args.params:
        theta0 = read_params(args.params)
    else:
        n_x = int(config.get("n_x", 1))
        overrides = {k: np.asarray(v, dtype=float) for k, v in config.get("init", {}).items()}
        bad = set(overrides) - set(PARAM_NAMES)
        if bad:
            raise ConfigError(f"unknown parameter names in 'init': {sorted(bad)}")
        theta0 = initial_params(y, n_x, warm_start_iters=warm, fixed=fixed, **overrides)
    try:
        cfg = LearnConfig(fixed=fixed, **opts)
    except TypeError as exc:
        raise ConfigError(f"bad learn options: {exc}") from None
    theta, trace = learn(y, theta0, cfg)
    extra = {"em_iterations": len(trace), "fb_passes": trace[-1]["fb_passes"] if trace else 0}
    return [
        write_params(out / "params.json", theta, extra),
        write_table(out / "trace.csv", trace, args.format),
    ]


def cmd_diag(args, config, out: Path) -> list[Path]:
    try:
        prior = ScalarPrior(**config.get("prior", {"mean": 0.0, "var": 1.0}))
        al = ALParams(**config.get("al", {"mu": 0.0, "p": 0.2, "sigma": 0.3}))
        g = config.get("innovation", {"min": -20.0, "max": 20.0, "num": 401})
        grid = np.linspace(float(g["min"]), float(g["max"]), int(g["num"]))
        ug = config.get("u", {"min": 0.0, "max": 25.0, "num": 101})
        u = np.linspace(float(ug["min"]), float(ug["max"]), int(ug["num"]))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad diag options: {exc}") from None
    return [
        _table(out, "response.csv", response_curve(prior, al, grid, _inference(config) if "inference" in config else None),
               args.format),
        _table(out, "adaptation.csv", adaptation_curve(al, u), args.format),
    ]


def _with_seed(config: dict, seed: int) -> dict:
    return {**config, "seed": seed}


def cmd_exp1(args, config, out: Path) -> list[Path]:
    return ex.run_experiment1(_with_seed(config, args.seed), out, args.format)["files"]


def cmd_exp2(args, config, out: Path) -> list[Path]:
    return ex.run_experiment2(_with_seed(config, args.seed), out, args.format)["files"]


def cmd_sv(args, config, out: Path) -> list[Path]:
    return ex.run_sv(_with_seed(config, args.seed), out, prices_csv=args.data, fmt=args.format)["files"]


COMMANDS = {
    "simulate": (cmd_simulate, "draw states and observations from a scenario"),
    "filter": (cmd_filter, "run a filter on observations"),
    "smooth": (cmd_smooth, "run a smoother on observations"),
    "learn": (cmd_learn, "estimate model parameters by EM"),
    "diag": (cmd_diag, "scalar robustness diagnostics"),
    "exp1": (cmd_exp1, "noise-family and multi-sensor smoothing study"),
    "exp2": (cmd_exp2, "contaminated-sensor filtering study"),
    "sv": (cmd_sv, "stochastic volatility extraction"),
}


# --------------------------------------------------------------------------
# argument parsing

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--seed", type=int, help="base random seed (default: config 'seed' or 0)")
    g.add_argument("--out", help="output directory (default: current directory)")
    g.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    g.add_argument("--method", choices=METHODS, help="filtering/smoothing method (default fast-al)")
    g.add_argument("--data", help="observations table, or price CSV for 'sv'")
    g.add_argument("--params", help="parameter JSON (model for filter/smooth, initial values for learn)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="alssm", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    rp = sub.add_parser("replay", parents=[common], help="re-run a command from its manifest.json",
                        argument_default=argparse.SUPPRESS)
    rp.add_argument("manifest", help="path to manifest.json")
    return parser


def _recorded_args(args) -> dict:
    rec = {"method": args.method, "format": args.format}
    for key in ("data", "params"):
        v = getattr(args, key)
        rec[key] = None if v is None else str(Path(v).resolve())
    return rec


def execute(command: str, args, config: dict) -> list[Path]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = COMMANDS[command][0](args, config, out)
    files.append(write_manifest(out, command, config, args.seed, _recorded_args(args), files))
    return files


def _replay(args) -> list[Path]:
    path = Path(args.manifest)
    try:
        record = json.loads(path.read_text())
        command, config, seed, rec = record["command"], record["config"], record["seed"], record["args"]
    except FileNotFoundError:
        raise ConfigError(f"{path}: manifest not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed manifest ({exc})") from None
    if command not in COMMANDS:
        raise ConfigError(f"{path}: unknown command {command!r}")
    ns = argparse.Namespace(seed=seed, out=args.out or str(path.parent), **rec)
    return execute(command, ns, config)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, default in (("config", None), ("seed", None), ("out", None), ("format", "csv"), ("method", "fast-al"),
                         ("data", None), ("params", None), ("verbose", False)):
        if not hasattr(args, key) or getattr(args, key) is None:
            setattr(args, key, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            files = _replay(args)
        else:
            config = load_config(args.config) if args.config else {}
            if args.seed is None:
                args.seed = int(config.get("seed", 0))
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            args.out = args.out or "."
            files = execute(args.command, args, config)
    except (ConfigError, ParameterError) as exc:
        print(f"alssm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"alssm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for f in files:
        log.info("wrote %s", f)
    return 0


__all__ = ["main", "build_parser", "execute", "COMMANDS", "METHODS"]
