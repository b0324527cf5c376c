"""Finite-horizon optimal control by direct single shooting.

The decision vector stacks the N control moves; the trajectory is recovered
by rolling the dynamics forward. Control boxes are handled exactly by the
projected quasi-Newton solver (L-BFGS-B); state boxes are softened into a
quadratic exterior penalty so infeasible initial conditions degrade
gracefully instead of failing. Gradients are central finite differences
that reuse the unperturbed rollout prefix, which both halves the work and
avoids cancellation against the untouched stages.

Reported values are the plain stage-cost sums along the solution (the
penalty only steers the optimizer), so a solution's ``value`` is exactly
``sum(stage_costs)``.

Solvers memoize solutions per (state bit-pattern, horizon, penalty weight):
the suboptimality estimators ask for the same auxiliary values many times
per closed-loop step, and a repeated solve would only duplicate work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import IntegrationFailure, NonFiniteObjective
from .systems import SystemModel, step_with_cost

_BIG = 1e100


@dataclass(frozen=True)
class SolverParams:
    """Knobs of the shooting solver.

    tol is the projected-gradient stationarity tolerance; penalty_weight is
    the exterior penalty on state-box violations; fd_step scales the central
    finite-difference step by max(1, |variable|).
    """

    tol: float = 1e-6
    penalty_weight: float = 1e3
    max_iterations: int = 200
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.tol <= 0 or self.fd_step <= 0:
            raise ValueError("tol and fd_step must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class OcpInstance:
    """One finite-horizon problem: initial state, horizon, optional warm start."""

    model: SystemModel
    x0: np.ndarray
    horizon: int
    warm_start: np.ndarray | None = None
    state_penalty_weight: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("initial state must be finite")
        if self.warm_start is not None:
            w = np.atleast_2d(np.asarray(self.warm_start, dtype=float))
            if w.shape != (self.horizon, self.model.control_dim):
                raise ValueError(
                    f"warm start shape {w.shape} does not match "
                    f"({self.horizon}, {self.model.control_dim})"
                )
            object.__setattr__(self, "warm_start", w)


@dataclass(frozen=True)
class OcpSolution:
    """Open-loop minimizer, its trajectory and value, plus solver diagnostics."""

    controls: np.ndarray        # (N, control_dim)
    trajectory: np.ndarray      # (N+1, state_dim)
    value: float                # sum of stage costs (penalty excluded)
    stage_costs: np.ndarray     # (N,)
    converged: bool
    iterations: int
    first_order_residual: float
    instance: OcpInstance

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def shift_pad(controls: np.ndarray, new_horizon: int) -> np.ndarray:
    """Receding-horizon warm start: drop the applied first move, pad or trim.

    Padding repeats the last control; the same padding serves prolongation
    re-solves (pass the un-shifted sequence and a longer horizon).
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    shifted = controls[1:]
    return pad_to(shifted, new_horizon)


def pad_to(controls: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last control (or zeros if empty) until the length matches."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    k, m = controls.shape
    if k >= horizon:
        return controls[:horizon].copy()
    if k == 0:
        return np.zeros((horizon, m))
    pad = np.repeat(controls[-1:], horizon - k, axis=0)
    return np.vstack([controls, pad])


class OcpSolver:
    """Shooting solver bound to one model, with a memoized solution cache.

    The cache is sound because (state, horizon, penalty weight) determine
    the problem completely for a fixed model; concurrent use may duplicate
    work but cannot corrupt results. ``solve_count`` counts actual
    optimizer runs (cache hits are free).
    """

    def __init__(self, model: SystemModel, params: SolverParams | None = None):
        self.model = model
        self.params = params or SolverParams()
        self._cache: dict[tuple, OcpSolution] = {}
        self.solve_count = 0
        self.cache_hits = 0

    # -- public API ---------------------------------------------------------

    def solve(self, x0, horizon: int, warm_start=None, state_penalty_weight=None) -> OcpSolution:
        """Solve the horizon-N problem from x0, reusing a cached solution if any."""
        instance = OcpInstance(
            model=self.model,
            x0=x0,
            horizon=int(horizon),
            warm_start=None if warm_start is None else pad_to(warm_start, int(horizon)),
            state_penalty_weight=state_penalty_weight,
        )
        return self.solve_instance(instance)

    def solve_instance(self, instance: OcpInstance) -> OcpSolution:
        if instance.model is not self.model:
            raise ValueError("instance was built for a different model")
        rho = (
            self.params.penalty_weight
            if instance.state_penalty_weight is None
            else instance.state_penalty_weight
        )
        key = (instance.x0.tobytes(), instance.horizon, rho)
        hit = self._cache.get(key)
        if hit is not None:
            self.cache_hits += 1
            return hit
        solution = self._optimize(instance, rho)
        self._cache[key] = solution
        return solution

    def value(self, x0, horizon: int, warm_start=None) -> float:
        """Optimal value V_N(x0); memoized like solve."""
        return self.solve(x0, horizon, warm_start).value

    def feedback(self, x0, horizon: int, warm_start=None) -> np.ndarray:
        """First element of the open-loop minimizer (the MPC feedback)."""
        return self.solve(x0, horizon, warm_start).controls[0]

    def cached(self, x0, horizon: int) -> OcpSolution | None:
        rho = self.params.penalty_weight
        return self._cache.get((np.asarray(x0, float).tobytes(), int(horizon), rho))

    def clear_cache(self) -> None:
        self._cache.clear()

    def shooting_gradient(self, x0, controls, rho: float | None = None) -> np.ndarray:
        """Gradient of the shooting objective at a control sequence (flat)."""
        x0 = np.asarray(x0, dtype=float)
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        rho = self.params.penalty_weight if rho is None else rho
        _, grad = self._fun_and_grad(x0, controls.ravel(), controls.shape[0], rho)
        return grad

    # -- internals ----------------------------------------------------------

    def _violation_sq(self, x) -> float:
        bounds = self.model.state_bounds
        if bounds is None:
            return 0.0
        total = 0.0
        for value, (lo, hi) in zip(x, bounds):
            if value < lo:
                total += (lo - value) ** 2
            elif value > hi:
                total += (value - hi) ** 2
        return total

    def _tail_cost(self, x, controls_2d, k0: int, rho: float) -> float:
        """Penalized cost of stages k0..N-1 starting from state x."""
        total = 0.0
        n = controls_2d.shape[0]
        for k in range(k0, n):
            x, c = step_with_cost(self.model, x, controls_2d[k])
            total += c
            if rho > 0.0:
                total += rho * self._violation_sq(x)
        return total

    def _fun_and_grad(self, x0, z, horizon, rho):
        m = self.model.control_dim
        controls = z.reshape(horizon, m)
        try:
            states, stage_costs = self._detailed_rollout(x0, controls, rho)
        except IntegrationFailure:
            return _BIG, np.zeros_like(z)
        fval = stage_costs["penalized"]
        if not np.isfinite(fval):
            return _BIG, np.zeros_like(z)
        grad = np.zeros_like(z)
        h0 = self.params.fd_step
        work = controls.copy()
        for k in range(horizon):
            base_state = states[k]
            for j in range(m):
                saved = work[k, j]
                h = h0 * max(1.0, abs(saved))
                work[k, j] = saved + h
                plus = self._safe_tail(base_state, work, k, rho)
                work[k, j] = saved - h
                minus = self._safe_tail(base_state, work, k, rho)
                work[k, j] = saved
                if np.isfinite(plus) and np.isfinite(minus):
                    grad[k * m + j] = (plus - minus) / (2.0 * h)
        return fval, grad

    def _safe_tail(self, x, controls_2d, k0, rho) -> float:
        try:
            return self._tail_cost(x, controls_2d, k0, rho)
        except IntegrationFailure:
            return np.inf

    def _detailed_rollout(self, x0, controls, rho):
        n = controls.shape[0]
        states = np.empty((n + 1, x0.size))
        costs = np.empty(n)
        states[0] = x0
        x = x0
        penalized = 0.0
        for k in range(n):
            x, costs[k] = step_with_cost(self.model, x, controls[k])
            states[k + 1] = x
            penalized += costs[k]
            if rho > 0.0:
                penalized += rho * self._violation_sq(x)
        return states, {"stage": costs, "penalized": penalized}

    def _optimize(self, instance: OcpInstance, rho: float) -> OcpSolution:
        n, m = instance.horizon, self.model.control_dim
        lo = np.array([b[0] for b in self.model.control_bounds])
        hi = np.array([b[1] for b in self.model.control_bounds])
        if instance.warm_start is not None:
            z0 = np.clip(instance.warm_start, lo, hi).ravel()
        else:
            z0 = np.clip(np.zeros((n, m)), lo, hi).ravel()
        bounds = [(lo[j], hi[j]) for _ in range(n) for j in range(m)]

        x0 = instance.x0

        def fun(z):
            return self._fun_and_grad(x0, z, n, rho)

        try:
            _, detail0 = self._detailed_rollout(x0, z0.reshape(n, m), rho)
            f0 = detail0["penalized"]
        except IntegrationFailure as exc:
            raise NonFiniteObjective(
                f"dynamics failed at the initial guess (horizon {n})"
            ) from exc
        if not np.isfinite(f0):
            raise NonFiniteObjective(
                f"objective non-finite at the initial guess (horizon {n})"
            )
        self.solve_count += 1
        result = minimize(
            fun,
            z0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={
                "maxiter": self.params.max_iterations,
                "ftol": 1e-16,
                "gtol": self.params.tol,
                "maxls": 60,
                "maxcor": 20,
                "maxfun": 100 * self.params.max_iterations,
            },
        )
        z = np.clip(result.x, np.tile(lo, n), np.tile(hi, n))
        controls = z.reshape(n, m)
        try:
            states, detail = self._detailed_rollout(x0, controls, rho)
        except IntegrationFailure as exc:
            raise NonFiniteObjective("dynamics blew up at the returned iterate") from exc
        stage_costs = detail["stage"]
        if not np.all(np.isfinite(stage_costs)) or not np.all(np.isfinite(states)):
            raise NonFiniteObjective("non-finite trajectory at the returned iterate")
        grad = np.asarray(result.jac, dtype=float)
        projected = z - np.clip(z - grad, np.tile(lo, n), np.tile(hi, n))
        residual = float(np.max(np.abs(projected))) if projected.size else 0.0

        controls.flags.writeable = False
        states.flags.writeable = False
        stage_costs.flags.writeable = False
        return OcpSolution(
            controls=controls,
            trajectory=states,
            value=float(np.sum(stage_costs)),
            stage_costs=stage_costs,
            converged=residual <= self.params.tol,
            iterations=int(result.nit),
            first_order_residual=residual,
            instance=instance,
        )


# -- module-level convenience over a transient or shared solver --------------


def solve(instance: OcpInstance, solver: OcpSolver | None = None,
          params: SolverParams | None = None) -> OcpSolution:
    """Solve one instance; pass a solver to share its cache across calls."""
    if solver is None:
        solver = OcpSolver(instance.model, params)
    return solver.solve_instance(instance)


def value(instance: OcpInstance, solver: OcpSolver | None = None,
          params: SolverParams | None = None) -> float:
    return solve(instance, solver, params).value


def feedback(instance: OcpInstance, solver: OcpSolver | None = None,
             params: SolverParams | None = None) -> np.ndarray:
    return solve(instance, solver, params).controls[0]
