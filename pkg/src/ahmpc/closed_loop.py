"""Closed-loop MPC runners and independent trace verification.

run_fixed applies the first move of a fixed-horizon solve at every step and
records the a posteriori suboptimality degree (one extra solve per step,
which doubles as the next step's warm start through the solver cache).
run_adaptive drives the horizon adaptation instead: free steps pick their
horizon via adapt_step, certified spans replay stored open-loop controls
with decrementing horizons and zero solves.

verify_trace re-solves every value with a fresh solver (no shared cache)
and reports the per-step Lyapunov slack, exact-replay flags, and the
finite-sum sandwich bound relating accumulated cost to the recorded values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adaptation import AdaptationConfig, adapt_step
from .errors import (
    EquilibriumReached,
    HorizonCapReached,
    IntegrationFailure,
    NonFiniteObjective,
    SolverFailure,
)
from .ocp import OcpSolver, SolverParams, pad_to
from .suboptimality import a_posteriori_alpha
from .systems import SystemModel, step, step_with_cost

TERMINATED_COST = "cost-threshold"
TERMINATED_STEPS = "step-limit"
TERMINATED_ERROR = "error"


@dataclass(frozen=True)
class StopRule:
    """Stop when the stage cost settles below the threshold, or on step count."""

    cost_threshold: float = 1e-3
    step_limit: int = 500

    def __post_init__(self):
        if self.cost_threshold <= 0:
            raise ValueError("cost_threshold must be positive")
        if self.step_limit < 0:
            raise ValueError("step_limit must be nonnegative")


@dataclass(frozen=True)
class StepRecord:
    index: int
    state: np.ndarray
    horizon: int
    control: np.ndarray
    stage_cost: float
    value: float
    alpha: float | None
    solves_performed: int
    reused_from_tail: bool


@dataclass(frozen=True)
class ClosedLoopTrace:
    records: tuple[StepRecord, ...]
    terminated: str
    initial_state: np.ndarray
    error: str | None = None

    @property
    def accumulated_cost(self) -> float:
        return float(sum(r.stage_cost for r in self.records))

    @property
    def n_star(self) -> int:
        return max((r.horizon for r in self.records), default=0)

    @property
    def horizons(self) -> list[int]:
        return [r.horizon for r in self.records]

    @property
    def total_solves(self) -> int:
        return sum(r.solves_performed for r in self.records)


def _record(i, x, horizon, u, stage, value, alpha, solves, reused) -> StepRecord:
    return StepRecord(
        index=i,
        state=np.array(x, dtype=float),
        horizon=int(horizon),
        control=np.array(u, dtype=float),
        stage_cost=float(stage),
        value=float(value),
        alpha=None if alpha is None else float(alpha),
        solves_performed=int(solves),
        reused_from_tail=bool(reused),
    )


def run_fixed(model: SystemModel, x0, n: int, stop: StopRule | None = None,
              params: SolverParams | None = None) -> ClosedLoopTrace:
    """Fixed-horizon closed loop with per-step a posteriori alpha records."""
    if n < 2:
        raise ValueError("fixed horizon must be >= 2")
    stop = stop or StopRule()
    solver = OcpSolver(model, params)
    x0 = np.asarray(x0, dtype=float)
    records: list[StepRecord] = []
    x = x0
    warm = None
    terminated = TERMINATED_STEPS
    error = None
    for i in range(stop.step_limit):
        before = solver.solve_count
        try:
            sol = solver.solve(x, n, warm_start=warm)
            stage = float(sol.stage_costs[0])
            if stage < stop.cost_threshold:
                records.append(_record(i, x, n, sol.controls[0], stage, sol.value,
                                       None, solver.solve_count - before, False))
                terminated = TERMINATED_COST
                break
            successor = sol.trajectory[1]
            warm = pad_to(sol.controls[1:], n)
            v_next = solver.value(successor, n, warm_start=warm)
            alpha = a_posteriori_alpha(sol.value, v_next, stage, stop.cost_threshold)
        except EquilibriumReached:
            records.append(_record(i, x, n, sol.controls[0], stage, sol.value,
                                   None, solver.solve_count - before, False))
            terminated = TERMINATED_COST
            break
        except (NonFiniteObjective, IntegrationFailure, SolverFailure) as exc:
            terminated = TERMINATED_ERROR
            error = str(exc)
            break
        records.append(_record(i, x, n, sol.controls[0], stage, sol.value,
                               alpha, solver.solve_count - before, False))
        x = successor
    return ClosedLoopTrace(tuple(records), terminated, x0, error)


def run_adaptive(model: SystemModel, x0, config: AdaptationConfig,
                 stop: StopRule | None = None, start_horizon: int | None = None,
                 params: SolverParams | None = None) -> ClosedLoopTrace:
    """Adaptive-horizon closed loop.

    Free steps call adapt_step; a certified span then replays the stored
    open-loop tail with horizons decremented one per step and no solver
    work. The starting horizon defaults to n_min, leaving the first step's
    prolongation to find the first feasible horizon.
    """
    stop = stop or StopRule()
    solver = OcpSolver(model, params)
    x0 = np.asarray(x0, dtype=float)
    n_next = config.n_min if start_horizon is None else int(start_horizon)
    if not config.n_min <= n_next <= config.n_max:
        raise ValueError("start_horizon outside the configured horizon window")
    records: list[StepRecord] = []
    x = x0
    warm = None
    tail: list[tuple[np.ndarray, int, float]] = []
    terminated = TERMINATED_STEPS
    error = None
    i = 0
    while i < stop.step_limit:
        if tail:
            u, n_i, v = tail.pop(0)
            x_next, stage = step_with_cost(model, x, u)
            records.append(_record(i, x, n_i, u, stage, v, None, 0, True))
            if stage < stop.cost_threshold:
                terminated = TERMINATED_COST
                break
            x = x_next
            i += 1
            continue
        before = solver.solve_count
        try:
            sol = solver.solve(x, n_next, warm_start=warm)
            stage = float(sol.stage_costs[0])
            if stage < stop.cost_threshold:
                records.append(_record(i, x, n_next, sol.controls[0], stage, sol.value,
                                       None, solver.solve_count - before, False))
                terminated = TERMINATED_COST
                break
            plan = adapt_step(x, n_next, config, solver, threshold=stop.cost_threshold)
        except EquilibriumReached:
            records.append(_record(i, x, n_next, sol.controls[0], stage, sol.value,
                                   None, solver.solve_count - before, False))
            terminated = TERMINATED_COST
            break
        except HorizonCapReached as exc:
            terminated = TERMINATED_ERROR
            error = str(exc)
            break
        except (NonFiniteObjective, IntegrationFailure, SolverFailure) as exc:
            terminated = TERMINATED_ERROR
            error = str(exc)
            break
        records.append(_record(i, x, plan.chosen_horizon, plan.applied_control,
                               plan.solution.stage_costs[0], plan.solution.value,
                               plan.alpha_achieved, solver.solve_count - before, False))
        x = plan.solution.trajectory[1]
        span = plan.certified_span
        tail = [
            (u, plan.chosen_horizon - 1 - j, v)
            for j, (u, v) in enumerate(zip(plan.reusable_tail, plan.tail_values))
        ]
        n_next = max(config.n_min, plan.next_start_horizon)
        warm = plan.solution.controls[max(span, 1):]
        i += 1
    return ClosedLoopTrace(tuple(records), terminated, x0, error)


# ---------------------------------------------------------------------------
# Independent verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepCheck:
    index: int
    horizon: int
    v_now: float
    v_next: float
    stage_cost: float
    slack: float
    reused: bool
    replay_exact: bool


@dataclass(frozen=True)
class SandwichCheck:
    index: int
    lhs: float
    value: float
    ok: bool


@dataclass(frozen=True)
class VerificationReport:
    steps: tuple[StepCheck, ...]
    sandwich: tuple[SandwichCheck, ...]
    alpha_bar: float
    alpha_min: float

    def min_slack(self, reused: bool | None = None) -> float:
        slacks = [s.slack for s in self.steps if reused is None or s.reused == reused]
        return min(slacks) if slacks else float("inf")

    def violations(self, tol: float = -1e-8, reused: bool | None = None) -> list[int]:
        return [
            s.index
            for s in self.steps
            if (reused is None or s.reused == reused) and s.slack < tol
        ]

    @property
    def replay_ok(self) -> bool:
        return all(s.replay_exact for s in self.steps)

    @property
    def sandwich_ok(self) -> bool:
        return all(s.ok for s in self.sandwich)


def verify_trace(trace: ClosedLoopTrace, model: SystemModel, alpha_bar: float,
                 params: SolverParams | None = None,
                 include_sandwich: bool = True,
                 sandwich_tol: float = 1e-6) -> VerificationReport:
    """Re-check a trace with a fresh solver, sharing nothing with the run.

    Per consecutive pair, the Lyapunov slack V(x_i) - V(x_{i+1}) -
    alpha_bar * l_i is recomputed from independent solves (warm-started
    from the trace's own applied controls, which are public data of the
    run). Replay exactness compares the recomputed successor state
    bit-for-bit. The sandwich entries check alpha_min times the remaining
    accumulated cost against the recomputed value at the largest horizon.
    """
    vsolver = OcpSolver(model, params)
    records = trace.records
    controls = [r.control for r in records]
    checks: list[StepCheck] = []
    for i in range(len(records) - 1):
        r = records[i]
        warm_now = pad_to(np.stack(controls[i:]), r.horizon)
        warm_next = pad_to(np.stack(controls[i + 1:]), r.horizon)
        v_now = vsolver.value(r.state, r.horizon, warm_start=warm_now)
        v_next = vsolver.value(records[i + 1].state, r.horizon, warm_start=warm_next)
        replay = bool(np.array_equal(step(model, r.state, r.control),
                                     records[i + 1].state))
        checks.append(StepCheck(
            index=r.index,
            horizon=r.horizon,
            v_now=v_now,
            v_next=v_next,
            stage_cost=r.stage_cost,
            slack=v_now - v_next - alpha_bar * r.stage_cost,
            reused=r.reused_from_tail,
            replay_exact=replay,
        ))
    alphas = [r.alpha if r.alpha is not None else alpha_bar for r in records]
    alpha_min = min(alphas) if alphas else alpha_bar
    sandwich: list[SandwichCheck] = []
    if include_sandwich and records:
        n_star = trace.n_star
        tail_cost = 0.0
        tail_costs = [0.0] * len(records)
        for i in range(len(records) - 1, -1, -1):
            tail_cost += records[i].stage_cost
            tail_costs[i] = tail_cost
        for i, r in enumerate(records):
            warm = pad_to(np.stack(controls[i:]), n_star)
            v_star = vsolver.value(r.state, n_star, warm_start=warm)
            lhs = alpha_min * tail_costs[i]
            sandwich.append(SandwichCheck(i, lhs, v_star,
                                          lhs <= v_star * (1.0 + sandwich_tol)))
    return VerificationReport(tuple(checks), tuple(sandwich), alpha_bar, alpha_min)
