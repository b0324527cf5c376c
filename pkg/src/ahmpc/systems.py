"""Control-system abstraction: discrete dynamics, stage cost, constraints.

Two kinds of systems are supported. An explicit-discrete system supplies its
transition map and stage cost directly. A sampled-continuous system is built
from an ODE with zero-order-hold controls: one discrete step integrates the
vector field over one sampling period, and the stage cost is the integral of
a cost rate along that trajectory, carried as an extra state coordinate so
the cost shares the integrator's error control.

All operations here are pure functions of their inputs; models are immutable
and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rk45
from .errors import IntegrationFailure

Bounds = tuple[tuple[float, float], ...]

KIND_DISCRETE = "explicit-discrete"
KIND_SAMPLED = "sampled-continuous"


def _normalize_bounds(bounds, dim: int, label: str) -> Bounds:
    out = []
    for i, pair in enumerate(bounds):
        lo, hi = pair
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if not lo <= hi:
            raise ValueError(f"{label} interval {i} is empty: ({lo}, {hi})")
        out.append((lo, hi))
    if len(out) != dim:
        raise ValueError(f"{label} has {len(out)} intervals, expected {dim}")
    return tuple(out)


@dataclass(frozen=True)
class SampledOde:
    """Continuous-time plant sampled with zero-order-hold controls.

    vector_field(x, u) returns dx/dt; cost_integrand(x, u) returns the
    nonnegative running-cost rate. Both are held at constant u over one
    sampling period. ``augmented_field``, if given, writes the state
    derivative and the cost rate into a buffer in one call; it must compute
    the same expressions and only exists to cut call overhead on hot paths.
    """

    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cost_integrand: Callable[[np.ndarray, np.ndarray], float]
    sampling_period: float
    integrator_tolerance: float = 1e-9
    augmented_field: Callable[[np.ndarray, np.ndarray, np.ndarray], None] | None = None
    # Optional compiled stepper (y_aug, u, t1, rtol, atol) -> (status, y_aug_final)
    # implementing the same embedded pair; statuses: 0 ok, 1 underflow, 2 budget.
    compiled_step: Callable | None = None

    def __post_init__(self):
        if self.sampling_period <= 0.0:
            raise ValueError("sampling_period must be positive")
        if self.integrator_tolerance <= 0.0:
            raise ValueError("integrator_tolerance must be positive")


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time control system with stage cost and box constraints.

    state_bounds of None means the state is unconstrained. Control bounds
    are required (use infinite endpoints for unconstrained components).
    ``transition`` evaluates the successor state and the stage cost jointly;
    for sampled systems this is one ODE integration instead of two.
    """

    state_dim: int
    control_dim: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    stage_cost: Callable[[np.ndarray, np.ndarray], float]
    control_bounds: Bounds
    state_bounds: Bounds | None = None
    kind: str = KIND_DISCRETE
    sampling_period: float = 1.0
    transition: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, float]] | None = None
    name: str = "system"

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be >= 1")
        if self.kind not in (KIND_DISCRETE, KIND_SAMPLED):
            raise ValueError(f"unknown system kind: {self.kind!r}")
        object.__setattr__(
            self,
            "control_bounds",
            _normalize_bounds(self.control_bounds, self.control_dim, "control_bounds"),
        )
        if self.state_bounds is not None:
            object.__setattr__(
                self,
                "state_bounds",
                _normalize_bounds(self.state_bounds, self.state_dim, "state_bounds"),
            )


def integrate_zoh(ode: SampledOde, x, u) -> tuple[np.ndarray, float]:
    """One zero-order-hold step: integrate state and running cost over one period.

    Returns (next_state, accumulated_cost). The cost coordinate is appended
    to the state and integrated simultaneously, so its accuracy is governed
    by the same tolerance as the state. Raises IntegrationFailure for
    singular dynamics (propagated from the step controller).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = x.size
    tol = ode.integrator_tolerance
    if ode.compiled_step is not None:
        status, y1 = ode.compiled_step(np.append(x, 0.0), u, ode.sampling_period, tol, tol)
        if status == 1:
            raise IntegrationFailure("step size underflow; dynamics appear singular")
        if status == 2:
            raise IntegrationFailure("step budget exhausted")
        return y1[:d].copy(), max(float(y1[d]), 0.0)
    if ode.augmented_field is not None:
        fused = ode.augmented_field

        def rhs(_t, y, out):
            fused(y, u, out)
    else:
        field_fn = ode.vector_field
        cost_fn = ode.cost_integrand

        def rhs(_t, y, out):
            xs = y[:d]
            out[:d] = field_fn(xs, u)
            out[d] = cost_fn(xs, u)

    y0 = np.append(x, 0.0)
    y1 = rk45.integrate(rhs, y0, 0.0, ode.sampling_period, rtol=tol, atol=tol)
    return y1[:d].copy(), max(float(y1[d]), 0.0)


def sampled_system(
    ode: SampledOde,
    control_bounds,
    state_bounds=None,
    name: str = "sampled",
    state_dim: int | None = None,
    control_dim: int | None = None,
) -> SystemModel:
    """Wrap a SampledOde as a SystemModel whose step integrates one period."""
    if state_dim is None or control_dim is None:
        raise ValueError("state_dim and control_dim are required")

    def transition(x, u):
        return integrate_zoh(ode, x, u)

    return SystemModel(
        state_dim=state_dim,
        control_dim=control_dim,
        dynamics=lambda x, u: transition(x, u)[0],
        stage_cost=lambda x, u: transition(x, u)[1],
        control_bounds=control_bounds,
        state_bounds=state_bounds,
        kind=KIND_SAMPLED,
        sampling_period=ode.sampling_period,
        transition=transition,
        name=name,
    )


def step(model: SystemModel, x, u) -> np.ndarray:
    """Successor state f(x, u)."""
    return step_with_cost(model, x, u)[0]


def step_with_cost(model: SystemModel, x, u) -> tuple[np.ndarray, float]:
    """Successor state and the stage cost paid for the move, jointly."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.transition is not None:
        x_next, cost = model.transition(x, u)
        return np.asarray(x_next, dtype=float), float(cost)
    return np.asarray(model.dynamics(x, u), dtype=float), float(model.stage_cost(x, u))


def rollout(model: SystemModel, x0, controls) -> np.ndarray:
    """Open-loop trajectory: states[k+1] = f(states[k], controls[k]).

    Returns an array of shape (K+1, state_dim) for K controls.
    """
    return rollout_with_cost(model, x0, controls)[0]


def rollout_with_cost(model: SystemModel, x0, controls) -> tuple[np.ndarray, np.ndarray]:
    """Open-loop trajectory plus the per-stage costs along it."""
    x0 = np.asarray(x0, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.size == 0:
        raise ValueError("rollout needs at least one control")
    horizon = controls.shape[0]
    states = np.empty((horizon + 1, x0.size))
    costs = np.empty(horizon)
    states[0] = x0
    x = x0
    for k in range(horizon):
        try:
            x, costs[k] = step_with_cost(model, x, controls[k])
        except IntegrationFailure as exc:
            raise IntegrationFailure(f"stage {k}: {exc}") from exc
        states[k + 1] = x
    return states, costs
