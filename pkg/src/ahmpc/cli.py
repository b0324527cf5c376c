"""Experiment runner: config files in, trace/summary/figure CSVs out.

Config files are flat ``key = value`` lines with ``#`` comments and dotted
keys for grouping. A config fully determines a run; the CLI only adds
overrides. Keys (defaults in parentheses):

    model                   crane | lq | finite | path to a python file
                            exposing build_model() -> SystemModel
    mode                    adaptive (default) | fixed
    x0                      comma-separated initial state (model default)
    alpha_bar               suboptimality bound, or comma-separated grid
    horizon.fixed (5)       horizon for mode = fixed
    horizon.min (2)         adaptive horizon window
    horizon.max (20)
    horizon.start           initial horizon (horizon.min)
    estimate.kind           a-posteriori (default) | a-priori
    estimate.n0 (2)         anchor window of the a priori estimate
    estimate.n_hat (2)      threshold horizon of the a priori shortening
    adapt.shortening        certified (default) | heuristic-decrement
    solver.tol (1e-6)       stationarity tolerance
    solver.penalty (1e3)    state-constraint penalty weight
    solver.max_iterations (200)
    ode.tol (1e-9)          integrator tolerance for sampled models
    stop.cost_threshold (1e-3)
    stop.step_limit (500)
    out (runs)              output directory
    seed (0)                reserved; the default solver is deterministic
    jobs (1)                parallel sweep workers

Exit codes: 0 success, 2 config error, 3 solver or adaptation failure.
CSV dialect: comma separator, header row, UTF-8, LF endings; float columns
carry 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import importlib.util
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import benchmarks
from .adaptation import AdaptationConfig
from .closed_loop import ClosedLoopTrace, StepRecord, StopRule, run_adaptive, run_fixed
from .errors import AhmpcError, ConfigError
from .ocp import SolverParams
from .systems import SystemModel


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    mode: str = "adaptive"
    x0: tuple[float, ...] | None = None
    alpha_grid: tuple[float, ...] = (0.5,)
    fixed_horizon: int = 5
    n_min: int = 2
    n_max: int = 20
    start_horizon: int | None = None
    estimator: str = "a-posteriori"
    n0: int = 2
    n_hat: int = 2
    shortening: str = "certified"
    tol_sqp: float = 1e-6
    penalty: float = 1e3
    max_iterations: int = 200
    ode_tol: float = 1e-9
    cost_threshold: float = 1e-3
    step_limit: int = 500
    out_dir: str = "runs"
    seed: int = 0
    jobs: int = 1


_FLOAT_FMT = "{:.17g}"


def _fmt(value: float) -> str:
    return _FLOAT_FMT.format(float(value))


def parse_config_text(text: str) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; returns {key: (raw value, line number)}."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", line=lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", line=lineno)
        entries[key] = (value.strip(), lineno)
    return entries


def _parse_float(raw, key, line):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}", field=key, line=line) from None


def _parse_int(raw, key, line):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", field=key, line=line) from None


def build_experiment_config(entries: dict[str, tuple[str, int]]) -> ExperimentConfig:
    """Validate raw entries into an ExperimentConfig; unknown keys are errors."""
    known = {
        "model", "mode", "x0", "alpha_bar", "horizon.fixed", "horizon.min",
        "horizon.max", "horizon.start", "estimate.kind", "estimate.n0",
        "estimate.n_hat", "adapt.shortening", "solver.tol", "solver.penalty",
        "solver.max_iterations", "ode.tol", "stop.cost_threshold",
        "stop.step_limit", "out", "seed", "jobs",
    }
    for key, (_, line) in entries.items():
        if key not in known:
            raise ConfigError("unknown key", field=key, line=line)

    def raw(key, default=None):
        return entries.get(key, (default, None))

    model, line = raw("model")
    if model is None:
        raise ConfigError("missing required key", field="model")
    mode, line = raw("mode", "adaptive")
    if mode not in ("adaptive", "fixed"):
        raise ConfigError(f"mode must be adaptive or fixed, got {mode!r}",
                          field="mode", line=line)

    x0 = None
    if "x0" in entries:
        val, line = entries["x0"]
        x0 = tuple(_parse_float(part.strip(), "x0", line) for part in val.split(","))

    alphas: tuple[float, ...] = (0.5,)
    if "alpha_bar" in entries:
        val, line = entries["alpha_bar"]
        alphas = tuple(_parse_float(p.strip(), "alpha_bar", line) for p in val.split(","))
        for a in alphas:
            if not 0.0 < a < 1.0:
                raise ConfigError(f"alpha_bar values must lie in (0, 1), got {a}",
                                  field="alpha_bar", line=line)

    def num(key, default, kind=_parse_float, positive=False):
        if key not in entries:
            return default
        val, line = entries[key]
        out = kind(val, key, line)
        if positive and out <= 0:
            raise ConfigError("must be positive", field=key, line=line)
        return out

    cfg = ExperimentConfig(
        model=model,
        mode=mode,
        x0=x0,
        alpha_grid=alphas,
        fixed_horizon=num("horizon.fixed", 5, _parse_int),
        n_min=num("horizon.min", 2, _parse_int),
        n_max=num("horizon.max", 20, _parse_int),
        start_horizon=num("horizon.start", None, _parse_int),
        estimator=raw("estimate.kind", "a-posteriori")[0],
        n0=num("estimate.n0", 2, _parse_int),
        n_hat=num("estimate.n_hat", 2, _parse_int),
        shortening=raw("adapt.shortening", "certified")[0],
        tol_sqp=num("solver.tol", 1e-6, positive=True),
        penalty=num("solver.penalty", 1e3),
        max_iterations=num("solver.max_iterations", 200, _parse_int),
        ode_tol=num("ode.tol", 1e-9, positive=True),
        cost_threshold=num("stop.cost_threshold", 1e-3, positive=True),
        step_limit=num("stop.step_limit", 500, _parse_int),
        out_dir=raw("out", "runs")[0],
        seed=num("seed", 0, _parse_int),
        jobs=num("jobs", 1, _parse_int),
    )
    try:
        _adaptation_config(cfg, cfg.alpha_grid[0])
        _solver_params(cfg)
        _stop_rule(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str, overrides: list[str] = (), out_dir: str | None = None,
                jobs: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            entries = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        entries[key.strip()] = (value.strip(), None)
    if out_dir is not None:
        entries["out"] = (out_dir, None)
    if jobs is not None:
        entries["jobs"] = (str(jobs), None)
    return build_experiment_config(entries)


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


def build_model(config: ExperimentConfig) -> tuple[SystemModel, np.ndarray]:
    """Instantiate the selected model and its initial state."""
    name = config.model
    if name == "crane":
        model = benchmarks.crane_model(ode_tol=config.ode_tol)
        default_x0 = benchmarks.CRANE_INITIAL_STATE
    elif name == "lq":
        model = benchmarks.lq_model(benchmarks.scalar_lq())
        default_x0 = np.array([1.0])
    elif name == "finite":
        system = benchmarks.FiniteControlSystem(
            dynamics=lambda x, u: x + u,
            stage_cost=lambda x, u: float(x @ x + u @ u),
            controls=(-1.0, -0.5, 0.0),
        )
        model = system.hull_model()
        default_x0 = np.array([1.0])
    elif name.endswith(".py") and os.path.exists(name):
        spec = importlib.util.spec_from_file_location("ahmpc_user_model", name)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        model = module.build_model()
        default_x0 = None
    else:
        raise ConfigError(f"unknown model {name!r}", field="model")
    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=float)
        if x0.size != model.state_dim:
            raise ConfigError(
                f"x0 has {x0.size} components, model needs {model.state_dim}",
                field="x0",
            )
        return model, x0
    if default_x0 is None:
        raise ConfigError("user-file models require an explicit x0", field="x0")
    return model, np.asarray(default_x0, dtype=float)


def _solver_params(config: ExperimentConfig) -> SolverParams:
    return SolverParams(
        tol=config.tol_sqp,
        penalty_weight=config.penalty,
        max_iterations=config.max_iterations,
    )


def _stop_rule(config: ExperimentConfig) -> StopRule:
    return StopRule(cost_threshold=config.cost_threshold, step_limit=config.step_limit)


def _adaptation_config(config: ExperimentConfig, alpha_bar: float) -> AdaptationConfig:
    return AdaptationConfig(
        alpha_bar=alpha_bar,
        n_min=config.n_min,
        n_max=config.n_max,
        n0=config.n0,
        n_hat=config.n_hat,
        estimator=config.estimator,
        shortening=config.shortening,
    )


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------


def _atomic_write(path: str, write_fn) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace_csv(path: str, trace: ClosedLoopTrace) -> str:
    """One row per closed-loop step; floats carry 17 significant digits."""
    records = trace.records
    state_dim = records[0].state.size if records else trace.initial_state.size
    control_dim = records[0].control.size if records else 1

    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["index", "horizon", "reused", "solves", "alpha", "stage_cost", "value"]
            + [f"x{i}" for i in range(state_dim)]
            + [f"u{i}" for i in range(control_dim)]
        )
        for r in records:
            writer.writerow(
                [r.index, r.horizon, int(r.reused_from_tail), r.solves_performed,
                 "" if r.alpha is None else _fmt(r.alpha),
                 _fmt(r.stage_cost), _fmt(r.value)]
                + [_fmt(v) for v in r.state]
                + [_fmt(v) for v in r.control]
            )

    _atomic_write(path, emit)
    return path


def read_trace_csv(path: str, terminated: str = "unknown") -> ClosedLoopTrace:
    """Rebuild a trace from its CSV; accumulated cost and horizons round-trip."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        state_cols = [i for i, name in enumerate(header) if name.startswith("x")]
        control_cols = [i for i, name in enumerate(header) if name.startswith("u")]
        records = []
        for row in reader:
            records.append(StepRecord(
                index=int(row[0]),
                state=np.array([float(row[i]) for i in state_cols]),
                horizon=int(row[1]),
                control=np.array([float(row[i]) for i in control_cols]),
                stage_cost=float(row[5]),
                value=float(row[6]),
                alpha=None if row[4] == "" else float(row[4]),
                solves_performed=int(row[3]),
                reused_from_tail=bool(int(row[2])),
            ))
    initial = records[0].state if records else np.zeros(1)
    return ClosedLoopTrace(tuple(records), terminated, initial)


def emit_figure_data(traces: list[tuple[float, ClosedLoopTrace]], kind: str,
                     path: str, sampling_period: float = 1.0) -> str:
    """Figure-ready CSVs.

    alpha-vs-cost: one row per trace (alpha_bar, accumulated_cost).
    horizon-vs-time: one row per record (alpha_bar, time, horizon); the
    horizon holds over [i*T, (i+1)*T).
    """
    if not traces:
        raise ValueError("traces must be nonempty")
    if kind == "alpha-vs-cost":
        def emit(fh):
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["alpha_bar", "accumulated_cost"])
            for alpha, trace in traces:
                writer.writerow([_fmt(alpha), _fmt(trace.accumulated_cost)])
    elif kind == "horizon-vs-time":
        def emit(fh):
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["alpha_bar", "time", "horizon"])
            for alpha, trace in traces:
                for r in trace.records:
                    writer.writerow([_fmt(alpha), _fmt(r.index * sampling_period),
                                     r.horizon])
    else:
        raise ValueError(f"unknown figure kind: {kind!r}")
    _atomic_write(path, emit)
    return path


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _run_single(config: ExperimentConfig, alpha_bar: float | None) -> dict:
    """One run (one alpha for adaptive sweeps; alpha_bar None means fixed)."""
    model, x0 = build_model(config)
    params = _solver_params(config)
    stop = _stop_rule(config)
    started = time.perf_counter()
    if config.mode == "fixed":
        trace = run_fixed(model, x0, config.fixed_horizon, stop, params)
        label = f"fixed_n{config.fixed_horizon}"
    else:
        adapt_cfg = _adaptation_config(config, alpha_bar)
        trace = run_adaptive(model, x0, adapt_cfg, stop,
                             start_horizon=config.start_horizon, params=params)
        label = f"alpha_{alpha_bar:g}"
    wall = time.perf_counter() - started
    trace_path = os.path.join(config.out_dir, f"trace_{label}.csv")
    write_trace_csv(trace_path, trace)
    return {
        "alpha_bar": "" if alpha_bar is None else _fmt(alpha_bar),
        "mode": config.mode,
        "horizon": config.fixed_horizon if config.mode == "fixed"
        else (config.start_horizon or config.n_min),
        "steps": len(trace.records),
        "terminated": trace.terminated,
        "accumulated_cost": _fmt(trace.accumulated_cost),
        "n_star": trace.n_star,
        "total_solves": trace.total_solves,
        "wall_time_s": _fmt(wall),
        "trace_path": trace_path,
        "error": trace.error or "",
    }


_SUMMARY_COLUMNS = ["alpha_bar", "mode", "horizon", "steps", "terminated",
                    "accumulated_cost", "n_star", "total_solves", "wall_time_s"]


def run_experiment(config: ExperimentConfig, quiet: bool = False) -> int:
    """Run the configured experiment; returns the process exit status."""
    os.makedirs(config.out_dir, exist_ok=True)
    if config.mode == "fixed":
        rows = [_run_single(config, None)]
    else:
        alphas = list(config.alpha_grid)
        if config.jobs > 1 and len(alphas) > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                rows = list(pool.map(_run_single, [config] * len(alphas), alphas))
        else:
            rows = [_run_single(config, a) for a in alphas]

    def emit_summary(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in _SUMMARY_COLUMNS])

    _atomic_write(os.path.join(config.out_dir, "summary.csv"), emit_summary)

    if config.mode == "adaptive":
        traces = [
            (float(row["alpha_bar"]), read_trace_csv(row["trace_path"]))
            for row in rows
        ]
        model, _ = build_model(config)
        emit_figure_data(traces, "alpha-vs-cost",
                         os.path.join(config.out_dir, "alpha_vs_cost.csv"))
        emit_figure_data(traces, "horizon-vs-time",
                         os.path.join(config.out_dir, "horizon_vs_time.csv"),
                         sampling_period=model.sampling_period)

    status = 0
    for row in rows:
        if not quiet:
            label = f"{float(row['alpha_bar']):g}" if row["alpha_bar"] else "-"
            print(f"[ahmpc] {row['mode']} alpha_bar={label} "
                  f"steps={row['steps']} terminated={row['terminated']} "
                  f"cost={float(row['accumulated_cost']):.6g} n_star={row['n_star']} "
                  f"solves={row['total_solves']} time={float(row['wall_time_s']):.1f}s")
        if row["terminated"] == "error":
            print(f"[ahmpc] run failed: {row['error']}", file=sys.stderr)
            status = 3
    return status


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ahmpc",
                                     description="Adaptive-horizon MPC experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config", help="path to the config file")
    run_p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
    run_p.add_argument("--out", default=None, help="output directory override")
    run_p.add_argument("--jobs", type=int, default=None, help="parallel sweep workers")
    run_p.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.override, args.out, args.jobs)
    except ConfigError as exc:
        print(f"[ahmpc] config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run_experiment(config, quiet=args.quiet)
    except ConfigError as exc:
        print(f"[ahmpc] config error: {exc}", file=sys.stderr)
        return 2
    except AhmpcError as exc:
        print(f"[ahmpc] failed: {exc}", file=sys.stderr)
        return 3


def console_main() -> None:  # pragma: no cover - thin entry point
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
