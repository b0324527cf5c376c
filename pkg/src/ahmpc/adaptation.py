"""Horizon adaptation: keep the local suboptimality degree above a bound.

Each closed-loop step solves at its current horizon, estimates alpha, and
then either consults a shortening strategy (alpha met the bound) or
iteratively prolongs the horizon by one until it does. Shortening does not
shrink the current problem; it certifies that the next few steps can reuse
the already-computed open-loop controls with horizons decremented by one
per step, so those steps cost no solves at all.

Two shortening flavors exist: the certified one re-checks the Lyapunov
decrease at every shifted tail point (one auxiliary solve per candidate
shift), and a heuristic one that skips the checks and merely starts the
next step one horizon shorter, trusting that step's own estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EquilibriumReached, HorizonCapReached
from .ocp import OcpSolution, OcpSolver, pad_to, shift_pad
from .suboptimality import (
    EQUILIBRIUM_THRESHOLD,
    a_posteriori_alpha,
    a_priori_alpha,
    gamma_bar,
    gamma_fit,
)

ESTIMATOR_A_POSTERIORI = "a-posteriori"
ESTIMATOR_A_PRIORI = "a-priori"
SHORTENING_CERTIFIED = "certified"
SHORTENING_HEURISTIC = "heuristic-decrement"


@dataclass(frozen=True)
class AdaptationConfig:
    """Bound, horizon window, and strategy selection for the adaptive loop."""

    alpha_bar: float
    n_min: int = 2
    n_max: int = 20
    n0: int = 2
    n_hat: int = 2
    estimator: str = ESTIMATOR_A_POSTERIORI
    shortening: str = SHORTENING_CERTIFIED

    def __post_init__(self):
        if not 0.0 < self.alpha_bar < 1.0:
            raise ValueError("alpha_bar must lie in (0, 1)")
        if self.n_min < 2 or self.n0 < 2 or self.n_hat < 2:
            raise ValueError("n_min, n0 and n_hat must all be >= 2")
        if self.n_min > self.n_max:
            raise ValueError("n_min must not exceed n_max")
        if self.estimator not in (ESTIMATOR_A_POSTERIORI, ESTIMATOR_A_PRIORI):
            raise ValueError(f"unknown estimator: {self.estimator!r}")
        if self.shortening not in (SHORTENING_CERTIFIED, SHORTENING_HEURISTIC):
            raise ValueError(f"unknown shortening mode: {self.shortening!r}")


@dataclass(frozen=True)
class ShorteningPlan:
    """Certified shift count and the controls reusable over it.

    span counts shifts k = 0..span for which the decrease condition was
    verified; steps 1..span-1 may replay tail[k-1] with horizon N-k. A span
    of 0 certifies nothing beyond the current step.
    """

    span: int
    tail: tuple[np.ndarray, ...]
    tail_values: tuple[float, ...]
    solves_performed: int = 0

    def __post_init__(self):
        if len(self.tail) != max(self.span - 1, 0):
            raise ValueError("tail length must be max(span - 1, 0)")
        if len(self.tail_values) != len(self.tail):
            raise ValueError("tail_values must align with tail")


@dataclass(frozen=True)
class AdaptationPlan:
    """Outcome of one adaptive step: horizon used, control, certificate."""

    chosen_horizon: int
    applied_control: np.ndarray
    alpha_achieved: float
    certified_span: int
    reusable_tail: tuple[np.ndarray, ...]
    solves_performed: int
    solution: OcpSolution
    tail_values: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.reusable_tail) != max(self.certified_span - 1, 0):
            raise ValueError("reusable_tail length must be max(certified_span - 1, 0)")

    @property
    def next_start_horizon(self) -> int:
        """Starting horizon for the next free step (after any reuse)."""
        return self.chosen_horizon - self.certified_span


def local_alpha(solution: OcpSolution, config: AdaptationConfig, solver: OcpSolver,
                threshold: float = EQUILIBRIUM_THRESHOLD) -> float:
    """Local suboptimality degree of a solved step under the configured estimator."""
    stage = float(solution.stage_costs[0])
    if stage <= threshold:
        raise EquilibriumReached(stage, threshold)
    if config.estimator == ESTIMATOR_A_POSTERIORI:
        successor = solution.trajectory[1]
        v_next = solver.value(
            successor, solution.horizon,
            warm_start=shift_pad(solution.controls, solution.horizon),
        )
        return a_posteriori_alpha(solution.value, v_next, stage, threshold)
    if solution.horizon < config.n0:
        raise ValueError(
            f"a priori estimation needs horizon >= n0, got {solution.horizon} < {config.n0}"
        )
    gamma, _ = gamma_fit(solution, config.n0, solver, threshold)
    return a_priori_alpha(gamma, solution.horizon, config.n0).alpha


def shorten_certified(solution: OcpSolution, config: AdaptationConfig, solver: OcpSolver,
                      threshold: float = EQUILIBRIUM_THRESHOLD) -> ShorteningPlan:
    """Largest certified shift span by direct Lyapunov re-checks.

    The caller guarantees the step itself already meets alpha_bar (the
    shift-0 check is exactly that inequality). For each further shift k the
    value of the (N-k)-horizon problem at the k-th open-loop point must
    exceed its value at the (k+1)-st point by alpha_bar times the stage
    cost there; both values come from auxiliary solves warm-started with
    the stored control tail. Extension stops early at tail points whose
    stage cost is below the equilibrium threshold.
    """
    n = solution.horizon
    if float(solution.stage_costs[0]) <= threshold:
        raise EquilibriumReached(float(solution.stage_costs[0]), threshold)
    before = solver.solve_count
    traj, controls = solution.trajectory, solution.controls
    span = 0
    for k in range(1, n - config.n_min):
        m = n - k
        sol_now = solver.solve(traj[k], m, warm_start=controls[k:])
        stage = float(sol_now.stage_costs[0])
        if stage <= threshold:
            break
        sol_next = solver.solve(traj[k + 1], m, warm_start=controls[k + 1:])
        if sol_now.value - sol_next.value < config.alpha_bar * stage:
            break
        span = k
    return _finish_plan(solution, solver, span, before)


def shorten_apriori(solution: OcpSolution, config: AdaptationConfig, solver: OcpSolver,
                    threshold: float = EQUILIBRIUM_THRESHOLD) -> ShorteningPlan:
    """Largest certified shift span from the controllability-constant bound.

    For each shift k, fit the smallest gamma satisfying the anchor
    inequality (window n_hat) together with the tail inequalities for
    horizons n_hat+1 .. N-k; the shift is admissible while that gamma stays
    strictly below the largest gamma whose a priori degree still meets
    alpha_bar at the shortened horizon N-k. The admissible span is capped
    below N - n0 - 1.
    """
    n = solution.horizon
    n0, nh = config.n0, config.n_hat
    if n < nh or n < n0:
        raise ValueError(f"horizon {n} below n0={n0} or n_hat={nh}")
    if float(solution.stage_costs[0]) <= threshold:
        raise EquilibriumReached(float(solution.stage_costs[0]), threshold)
    before = solver.solve_count
    cap = n - n0 - 1  # admissible shifts satisfy k < cap
    if cap <= 0:
        return _finish_plan(solution, solver, 0, before)

    traj, controls = solution.trajectory, solution.controls
    anchor_den = -np.inf
    for j in range(2, nh + 1):
        aux = solver.solve(traj[n - j], j - 1, warm_start=controls[n - j:])
        anchor_den = max(anchor_den, float(aux.stage_costs[0]))
    anchor_num = solver.value(traj[n - nh], n0, warm_start=controls[n - nh:])
    anchor = anchor_num / anchor_den - 1.0 if anchor_den > threshold else np.inf

    ratios: dict[int, float] = {}
    for ki in range(nh + 1, n + 1):
        aux = solver.solve(traj[n - ki], ki, warm_start=controls[n - ki:])
        stage = float(aux.stage_costs[0])
        ratios[ki] = aux.value / stage - 1.0 if stage > threshold else np.inf

    span = 0
    last_ok = -1
    for k in range(0, cap):
        tail_max = max((ratios[ki] for ki in range(nh + 1, n - k + 1)), default=-np.inf)
        fitted = max(0.0, anchor, tail_max)
        if fitted >= gamma_bar(config.alpha_bar, n - k, n0):
            break
        last_ok = k
    if last_ok >= 1:
        span = last_ok
    return _finish_plan(solution, solver, span, before)


def _finish_plan(solution: OcpSolution, solver: OcpSolver, span: int,
                 count_from: int) -> ShorteningPlan:
    n = solution.horizon
    tail = tuple(np.array(solution.controls[k]) for k in range(1, span))
    tail_values = tuple(
        solver.value(solution.trajectory[k], n - k,
                     warm_start=solution.controls[k:])
        for k in range(1, span)
    )
    return ShorteningPlan(span=span, tail=tail, tail_values=tail_values,
                          solves_performed=solver.solve_count - count_from)


def prolong(x, n_from: int, config: AdaptationConfig, solver: OcpSolver,
            threshold: float = EQUILIBRIUM_THRESHOLD,
            ) -> tuple[int, OcpSolution, float, int]:
    """Increase the horizon one stage at a time until alpha meets the bound.

    Each candidate re-solves with the previous solution padded by its last
    control. Returns (horizon, solution, alpha, solves). Raises
    HorizonCapReached with the per-horizon alpha record if the cap falls.
    """
    if n_from >= config.n_max:
        raise HorizonCapReached(
            f"prolongation requested at the horizon cap {config.n_max}", []
        )
    before = solver.solve_count
    cached = solver.cached(x, n_from)
    prev_controls = None if cached is None else cached.controls
    attempts: list[tuple[int, float]] = []
    for n in range(n_from + 1, config.n_max + 1):
        warm = None if prev_controls is None else pad_to(prev_controls, n)
        sol = solver.solve(x, n, warm_start=warm)
        alpha = local_alpha(sol, config, solver, threshold)
        attempts.append((n, alpha))
        if alpha >= config.alpha_bar:
            return n, sol, alpha, solver.solve_count - before
        prev_controls = sol.controls
    raise HorizonCapReached(
        f"no horizon up to {config.n_max} reaches alpha_bar = {config.alpha_bar}"
        f" (best {max(a for _, a in attempts):.4f})",
        attempts,
    )


def adapt_step(x, n_start: int, config: AdaptationConfig, solver: OcpSolver,
               threshold: float = EQUILIBRIUM_THRESHOLD) -> AdaptationPlan:
    """One adaptive decision: solve, estimate, then shorten or prolong.

    Returns a plan whose horizon meets alpha_bar under the configured
    estimator. EquilibriumReached propagates to the caller (the loop treats
    it as successful termination); HorizonCapReached reports an unreachable
    bound with diagnostics.
    """
    if not config.n_min <= n_start <= config.n_max:
        raise ValueError(f"n_start {n_start} outside [{config.n_min}, {config.n_max}]")
    before = solver.solve_count
    solution = solver.solve(x, n_start)
    alpha = local_alpha(solution, config, solver, threshold)
    if alpha >= config.alpha_bar:
        if config.shortening == SHORTENING_CERTIFIED:
            if config.estimator == ESTIMATOR_A_POSTERIORI:
                plan = shorten_certified(solution, config, solver, threshold)
            else:
                plan = shorten_apriori(solution, config, solver, threshold)
            span, tail, tail_values = plan.span, plan.tail, plan.tail_values
        else:
            span, tail, tail_values = 1, (), ()
        return AdaptationPlan(
            chosen_horizon=n_start,
            applied_control=np.array(solution.controls[0]),
            alpha_achieved=alpha,
            certified_span=span,
            reusable_tail=tail,
            solves_performed=solver.solve_count - before,
            solution=solution,
            tail_values=tail_values,
        )
    n_new, solution, alpha, _ = prolong(x, n_start, config, solver, threshold)
    return AdaptationPlan(
        chosen_horizon=n_new,
        applied_control=np.array(solution.controls[0]),
        alpha_achieved=alpha,
        certified_span=0,
        reusable_tail=(),
        solves_performed=solver.solve_count - before,
        solution=solution,
        tail_values=(),
    )
