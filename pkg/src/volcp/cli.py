"""Command line interface.

Exit codes: 0 success, 2 input/configuration error, 3 numeric or
degenerate-data error.  ``VOLCP_WORKERS`` sets the worker count for Monte
Carlo work; outputs do not depend on it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .changepoint import DegenerateInputError, TrimError, cusum_stats, estimate_changepoint
from .drift_np import DriftEstimateError, nw_drift
from .inference import (
    IntervalError,
    McConfig,
    QuantileTable,
    TableMismatchError,
    Target,
    ci_changepoint,
    ci_thetas,
    simulate_argmax_law,
    simulate_bridge_sup,
    test_no_change,
)
from .io import (
    ConfigError,
    InputError,
    RunConfig,
    default_cache_dir,
    load_csv,
    load_run_config,
    load_yaml,
    write_path_csv,
    write_report,
)
from .model_sim import MODELS, SimulationError, make_model, simulate_path
from .montecarlo import ExperimentConfig, ReplicationError, run_replications
from .residuals import ResidualError, residuals_estimated, residuals_known

EXIT_INPUT = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    DegenerateInputError,
    SimulationError,
    ResidualError,
    DriftEstimateError,
    IntervalError,
    ReplicationError,
    FloatingPointError,
)

_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("exp", "log", "sqrt", "sin", "cos", "tanh", "abs", "pi", "where", "maximum", "minimum")
}


def coefficient(expr: str):
    """Turn an expression in ``x`` (numpy functions allowed) into a vectorised callable."""
    try:
        code = compile(expr, "<coefficient>", "eval")
    except SyntaxError as exc:
        raise InputError(f"bad coefficient expression {expr!r}: {exc.msg}") from None

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "x": x}), dtype=float) + 0.0 * x

    try:
        f(np.zeros(1))
    except Exception as exc:  # noqa: BLE001
        raise InputError(f"bad coefficient expression {expr!r}: {exc}") from None
    return f


def _emit(blob: bytes, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.buffer.write(blob)
        sys.stdout.flush()
    else:
        Path(out).write_bytes(blob)


def _config(args) -> RunConfig:
    base = load_run_config(getattr(args, "config", None))
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "trim_delta", "kernel", "bandwidth", "drift", "b", "sigma", "alpha", "coverage",
            "theta_tilde", "seed", "mc_paths", "mc_grid", "argmax_paths", "argmax_horizon",
            "argmax_step", "cache_dir",
        )
    }
    if getattr(args, "weighted", False):
        overrides["weighted"] = True
    return base.merged(**overrides)


def _fit(args, cfg: RunConfig):
    path = load_csv(args.path, delta=args.delta)
    if cfg.drift == "known":
        res = residuals_known(path, coefficient(cfg.b), coefficient(cfg.sigma))
    else:
        res = residuals_estimated(path, nw_drift(path, cfg.kernel, cfg.bandwidth))
    trace = cusum_stats(res)
    return path, trace, estimate_changepoint(trace, cfg.trim_delta)


def _cached_table(cfg: RunConfig, target: Target, mc: McConfig, trim: float | None, no_cache: bool) -> QuantileTable:
    key = json.dumps({"target": target.value, "trim_delta": trim, "mc": asdict(mc)}, sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:20]
    root = Path(cfg.cache_dir) if cfg.cache_dir else default_cache_dir()
    file = root / "critvals" / f"{target.value}-{digest}.json"
    if not no_cache and file.exists():
        return QuantileTable.from_json(file.read_text())
    if target is Target.ARGMAX_DRIFT_BM:
        table = simulate_argmax_law(mc)
    else:
        table = simulate_bridge_sup(trim, target is Target.WEIGHTED_BRIDGE_SUP, mc)
    if not no_cache:
        file.parent.mkdir(parents=True, exist_ok=True)
        file.write_text(table.to_json())
    return table


def _bridge_table(cfg: RunConfig, no_cache: bool) -> QuantileTable:
    target = Target.WEIGHTED_BRIDGE_SUP if cfg.weighted else Target.BRIDGE_SUP
    mc = McConfig(paths=cfg.mc_paths, seed=cfg.seed, grid=cfg.mc_grid, trim_delta=cfg.trim_delta)
    return _cached_table(cfg, target, mc, cfg.trim_delta, no_cache)


def _argmax_table(cfg: RunConfig, no_cache: bool) -> QuantileTable:
    mc = McConfig(paths=cfg.argmax_paths, seed=cfg.seed, horizon=cfg.argmax_horizon, step=cfg.argmax_step)
    return _cached_table(cfg, Target.ARGMAX_DRIFT_BM, mc, None, no_cache)


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args) -> None:
    params = {"theta1": args.theta1, "theta2": args.theta2, "tau0": args.tau0, "n": args.n, "T": args.T}
    if args.x0 is not None:
        params["x0"] = args.x0
    if args.model == "ou":
        params.update(kappa=args.kappa, mu=args.mu)
    elif args.model == "geometric":
        params.update(mu=args.mu)
    try:
        model = make_model(args.model, **params)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(write_path_csv(simulate_path(model, args.seed)).encode(), args.out)


def cmd_detect(args) -> None:
    cfg = _config(args)
    _, trace, fit = _fit(args, cfg)
    if args.format == "csv":
        _emit(write_report(trace, "csv"), args.out)
    else:
        _emit(write_report(fit, "json", seed=None, config=_echo(args, cfg)), args.out)


def cmd_test(args) -> None:
    cfg = _config(args)
    _, trace, _ = _fit(args, cfg)
    table = _bridge_table(cfg, args.no_cache)
    report = test_no_change(trace, cfg.trim_delta, cfg.alpha, table)
    _emit(write_report(report, "json", seed=cfg.seed, config=_echo(args, cfg)), args.out)


def cmd_ci(args) -> None:
    cfg = _config(args)
    _, _, fit = _fit(args, cfg)
    table = _argmax_table(cfg, args.no_cache)
    tau = ci_changepoint(fit, cfg.coverage, table, cfg.theta_tilde)
    th1, th2 = ci_thetas(fit, cfg.coverage)
    doc = {
        "schema": "volcp.report",
        "schema_version": 1,
        "kind": "intervals",
        "fit": json.loads(write_report(fit)),
        "intervals": [json.loads(write_report(i)) for i in (tau, th1, th2)],
        "seed": cfg.seed,
        "config": _echo(args, cfg),
    }
    _emit((json.dumps(doc, indent=1) + "\n").encode(), args.out)


def cmd_critvals(args) -> None:
    cfg = _config(args)
    target = {"bridge": Target.BRIDGE_SUP, "weighted": Target.WEIGHTED_BRIDGE_SUP, "argmax": Target.ARGMAX_DRIFT_BM}[
        args.target
    ]
    if target is Target.ARGMAX_DRIFT_BM:
        table = _argmax_table(cfg, args.no_cache)
    else:
        table = _bridge_table(cfg.merged(weighted=target is Target.WEIGHTED_BRIDGE_SUP), args.no_cache)
    fmt = "csv" if args.format == "csv" else "json"
    _emit(write_report(table, fmt, seed=cfg.seed, config=_echo(args, cfg)), args.out)


_EXPERIMENT_KEYS = {
    "replications", "seed", "trim_delta", "drift_mode", "kernel", "bandwidth", "alpha",
    "coverage", "theta_tilde", "compare_known", "failure_budget",
}


def experiment_from_mapping(data: dict) -> tuple[ExperimentConfig, list]:
    """Parse an experiment file: ``model``, experiment options and optional ``tables``."""
    data = dict(data)
    unknown = sorted(set(data) - _EXPERIMENT_KEYS - {"model", "tables"})
    if unknown:
        raise ConfigError(f"unknown experiment keys: {unknown}")
    if "model" not in data or "replications" not in data:
        raise ConfigError("experiment needs 'model' and 'replications'")
    model_cfg = dict(data.pop("model"))
    tables_cfg = data.pop("tables", None) or {}
    try:
        model = make_model(model_cfg.pop("name", "bm"), **model_cfg)
        cfg = ExperimentConfig(model=model, **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment: {exc}") from None
    tables = []
    for name, spec in tables_cfg.items():
        spec = dict(spec or {})
        try:
            if name == "argmax":
                mc = McConfig(paths=spec.pop("paths", 100000), seed=spec.pop("seed", cfg.seed),
                              horizon=spec.pop("horizon", 50.0), step=spec.pop("step", 0.01))
                tables.append(("argmax", mc, None))
            elif name in ("bridge", "weighted"):
                mc = McConfig(paths=spec.pop("paths", 20000), seed=spec.pop("seed", cfg.seed),
                              grid=spec.pop("grid", 5000), trim_delta=cfg.trim_delta)
                tables.append((name, mc, cfg.trim_delta))
            else:
                raise ConfigError(f"unknown table {name!r}; use bridge, weighted or argmax")
        except TypeError as exc:
            raise ConfigError(f"invalid table {name!r}: {exc}") from None
        if spec:
            raise ConfigError(f"unknown keys for table {name!r}: {sorted(spec)}")
    return cfg, tables


def cmd_mc(args) -> None:
    cfg, table_specs = experiment_from_mapping(load_yaml(args.experiment))
    tables = []
    for name, mc, trim in table_specs:
        if name == "argmax":
            tables.append(simulate_argmax_law(mc))
        else:
            tables.append(simulate_bridge_sup(trim, name == "weighted", mc))
    summary = run_replications(cfg, tables)
    summary.config["tables"] = [{"target": t.target.value, **asdict(t.mc_config)} for t in tables]
    _emit((summary.to_json() + "\n").encode(), args.out)
    if args.records_csv:
        Path(args.records_csv).write_text(summary.records_csv())


def _echo(args, cfg: RunConfig) -> dict:
    echo = {"command": args.command, **asdict(cfg)}
    if hasattr(args, "path"):
        echo["path"] = str(args.path)
        echo["delta"] = args.delta
    echo.pop("cache_dir", None)
    return echo


# -- parser -------------------------------------------------------------------


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("path", help="CSV with columns t,x or x")
    p.add_argument("--delta", type=float, help="sampling interval when the file has no time column")
    p.add_argument("--config", help="YAML file with option defaults")
    p.add_argument("--delta-trim", dest="trim_delta", type=float, help="trim fraction (default 0.05)")
    p.add_argument("--drift", choices=["known", "estimate"])
    p.add_argument("--b", help="known drift as an expression in x (default 0)")
    p.add_argument("--sigma", help="known diffusion as an expression in x (default 1)")
    p.add_argument("--kernel", choices=["gaussian", "epanechnikov"])
    p.add_argument("--bandwidth", type=float, help="override the Silverman bandwidth")
    p.add_argument("--out", help="output file (default stdout)")


def _add_cache_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--no-cache", action="store_true", help="always simulate, never read or write the cache")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="volcp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a path CSV from a named model")
    p.add_argument("--model", choices=sorted(MODELS), default="bm")
    p.add_argument("--theta1", type=float, default=1.0)
    p.add_argument("--theta2", type=float, default=2.0)
    p.add_argument("--tau0", type=float, default=0.5)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--x0", type=float)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="estimate the change point")
    _add_fit_options(p)
    p.add_argument("--format", choices=["json", "csv"], default="json", help="csv emits the CUSUM trace")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("test", help="test for no change in volatility")
    _add_fit_options(p)
    _add_cache_options(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--weighted", action="store_true", help="use the studentized V statistic")
    p.add_argument("--mc-paths", dest="mc_paths", type=int)
    p.add_argument("--mc-grid", dest="mc_grid", type=int)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("ci", help="confidence intervals for tau0, theta1 and theta2")
    _add_fit_options(p)
    _add_cache_options(p)
    p.add_argument("--coverage", type=float)
    p.add_argument("--theta-tilde", dest="theta_tilde", choices=["pooled", "theta1", "theta2"])
    p.add_argument("--argmax-paths", dest="argmax_paths", type=int)
    p.add_argument("--horizon", dest="argmax_horizon", type=float)
    p.add_argument("--step", dest="argmax_step", type=float)
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("critvals", help="build or load a cached critical-value table")
    p.add_argument("--target", choices=["bridge", "weighted", "argmax"], default="bridge")
    p.add_argument("--config")
    p.add_argument("--delta-trim", dest="trim_delta", type=float)
    p.add_argument("--paths", dest="mc_paths", type=int)
    p.add_argument("--grid", dest="mc_grid", type=int)
    p.add_argument("--argmax-paths", dest="argmax_paths", type=int)
    p.add_argument("--horizon", dest="argmax_horizon", type=float)
    p.add_argument("--step", dest="argmax_step", type=float)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out")
    _add_cache_options(p)
    p.set_defaults(func=cmd_critvals)

    p = sub.add_parser("mc", help="run a Monte Carlo experiment file")
    p.add_argument("experiment", help="YAML experiment file")
    p.add_argument("--out")
    p.add_argument("--records-csv", dest="records_csv")
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except _NUMERIC_ERRORS as exc:
        print(f"volcp: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConfigError, TrimError, TableMismatchError, OSError, ValueError) as exc:
        print(f"volcp: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
