"""Benchmark systems and independent value-function oracles.

Three substrates:

* the crane benchmark (a crab moving along a rail with a variable-length
  rope, the load modeled as a damped pendulum), used for the end-to-end
  adaptive-horizon experiments;
* small linear-quadratic systems with a backward Riccati recursion as an
  exact value-function oracle;
* explicit-discrete systems with finitely many control values, solved
  exactly by exhaustive enumeration, as a second oracle independent of any
  gradient-based machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EnumerationTooLarge, IntegrationFailure, SingularInnovation
from .systems import SampledOde, SystemModel, rollout_with_cost, sampled_system

# ---------------------------------------------------------------------------
# Crane benchmark
# ---------------------------------------------------------------------------

GRAVITY = 9.81
ANGLE_DAMPING = 0.1
# Running-cost weights: swing kinetic, swing potential, crab position error,
# crab velocity, rope length error, rope velocity, control effort.
CRANE_WEIGHTS = (0.25, 0.5, 40.0, 20.0, 20.0, 20.0, 0.1)
CRANE_TARGET_POS = 3.0
CRANE_TARGET_ROPE = 2.0
CRANE_PERIOD = 0.2
CRANE_STATE_BOUNDS = (
    (-5.0, 5.0),   # crab position
    (-5.0, 5.0),   # crab velocity
    (1.0, 4.0),    # rope length
    (-1.0, 2.0),   # rope velocity
    (-1.0, 1.0),   # deflection angle
    (None, None),  # angular velocity, free
)
CRANE_CONTROL_BOUNDS = ((-5.0, 5.0), (-1.0, 2.0))
CRANE_INITIAL_STATE = np.array([-3.0, 0.0, 5.0, 0.0, 0.0, 0.0])
CRANE_REST_STATE = np.array([CRANE_TARGET_POS, 0.0, CRANE_TARGET_ROPE, 0.0, 0.0, 0.0])


def crane_vector_field(x, u) -> np.ndarray:
    """Crab/rope/pendulum dynamics; crab and rope accelerations are the controls."""
    _pos, vel, rope, rope_vel, angle, angle_vel = x
    u1, u2 = float(u[0]), float(u[1])
    if rope <= 0.0:
        raise IntegrationFailure(f"rope length {rope:.3e} is not positive")
    angle_acc = (
        -ANGLE_DAMPING * angle_vel
        - (GRAVITY / rope) * math.sin(angle)
        - u1 * math.cos(angle)
    )
    return np.array([vel, u1, rope_vel, u2, angle_vel, angle_acc])


def crane_cost_rate(x, u) -> float:
    """Quadratic-ish running-cost rate around the transport target."""
    pos, vel, rope, rope_vel, angle, angle_vel = x
    c1, c2, c3, c4, c5, c6, c7 = CRANE_WEIGHTS
    return (
        c1 * angle_vel * angle_vel * rope * rope
        + c2 * GRAVITY * rope * (1.0 - math.cos(angle))
        + c3 * (pos - CRANE_TARGET_POS) ** 2
        + c4 * vel * vel
        + c5 * (rope - CRANE_TARGET_ROPE) ** 2
        + c6 * rope_vel * rope_vel
        + c7 * (float(u[0]) ** 2 + float(u[1]) ** 2)
    )


def crane_augmented_field(y, u, out) -> None:
    """Fused derivative-and-cost-rate evaluation for the integration hot path.

    Computes exactly the expressions of crane_vector_field and
    crane_cost_rate, written into ``out`` without allocations.
    """
    pos = y[0]
    vel = y[1]
    rope = y[2]
    rope_vel = y[3]
    angle = y[4]
    angle_vel = y[5]
    u1 = u[0]
    u2 = u[1]
    if rope <= 0.0:
        raise IntegrationFailure(f"rope length {rope:.3e} is not positive")
    sin_a = math.sin(angle)
    cos_a = math.cos(angle)
    out[0] = vel
    out[1] = u1
    out[2] = rope_vel
    out[3] = u2
    out[4] = angle_vel
    out[5] = -ANGLE_DAMPING * angle_vel - (GRAVITY / rope) * sin_a - u1 * cos_a
    c1, c2, c3, c4, c5, c6, c7 = CRANE_WEIGHTS
    out[6] = (
        c1 * angle_vel * angle_vel * rope * rope
        + c2 * GRAVITY * rope * (1.0 - cos_a)
        + c3 * (pos - CRANE_TARGET_POS) ** 2
        + c4 * vel * vel
        + c5 * (rope - CRANE_TARGET_ROPE) ** 2
        + c6 * rope_vel * rope_vel
        + c7 * (u1 * u1 + u2 * u2)
    )


def crane_model(ode_tol: float = 1e-9, compiled: bool = True) -> SystemModel:
    """Sampled crane system with soft state constraints.

    The standard initial rope length (5) lies outside the rope-length box
    [1, 4], so state constraints are enforced by penalty in the solver
    rather than hard bounds; the box is recorded here for that purpose.
    With compiled=True (and numba present) integration runs through a
    compiled twin of the same embedded pair; pass False to force the
    interpreter path.
    """
    compiled_step = None
    if compiled:
        from . import _crane_fast

        if _crane_fast.HAVE_NUMBA:
            compiled_step = _crane_fast.crane_zoh_step
    ode = SampledOde(
        vector_field=crane_vector_field,
        cost_integrand=crane_cost_rate,
        sampling_period=CRANE_PERIOD,
        integrator_tolerance=ode_tol,
        augmented_field=crane_augmented_field,
        compiled_step=compiled_step,
    )
    return sampled_system(
        ode,
        control_bounds=CRANE_CONTROL_BOUNDS,
        state_bounds=CRANE_STATE_BOUNDS,
        name="crane",
        state_dim=6,
        control_dim=2,
    )


def crane_swing_energy(x) -> float:
    """Mechanical energy of the swing: kinetic plus pendulum potential."""
    rope, angle, angle_vel = float(x[2]), float(x[4]), float(x[5])
    return 0.5 * rope * rope * angle_vel * angle_vel + GRAVITY * rope * (1.0 - math.cos(angle))


# ---------------------------------------------------------------------------
# Linear-quadratic systems and the Riccati oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqSystem:
    """x+ = A x + B u with stage cost x'Qx + u'Ru, unconstrained."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "q", "r"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.a.shape[0]
        m = self.b.shape[1]
        if self.a.shape != (n, n) or self.b.shape != (n, m):
            raise ValueError("A must be square and B conformable")
        if self.q.shape != (n, n) or self.r.shape != (m, m):
            raise ValueError("Q and R must match the state/control dimensions")
        if np.min(np.linalg.eigvalsh((self.q + self.q.T) / 2)) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh((self.r + self.r.T) / 2)) <= 0.0:
            raise ValueError("R must be positive definite")

    @property
    def state_dim(self) -> int:
        return self.a.shape[0]

    @property
    def control_dim(self) -> int:
        return self.b.shape[1]


def scalar_lq() -> LqSystem:
    """The scalar workhorse: A = B = Q = R = 1."""
    return LqSystem(a=[[1.0]], b=[[1.0]], q=[[1.0]], r=[[1.0]])


def lq_model(lq: LqSystem, name: str = "lq") -> SystemModel:
    """LQ system wrapped as an explicit-discrete SystemModel (unconstrained)."""
    a, b, q, r = lq.a, lq.b, lq.q, lq.r

    def dyn(x, u):
        return a @ x + b @ u

    def cost(x, u):
        return float(x @ q @ x + u @ r @ u)

    return SystemModel(
        state_dim=lq.state_dim,
        control_dim=lq.control_dim,
        dynamics=dyn,
        stage_cost=cost,
        control_bounds=((None, None),) * lq.control_dim,
        name=name,
    )


def riccati_matrices(lq: LqSystem, n: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Cost-to-go matrices P_1..P_n and gains K_1..K_n for tail lengths 1..n.

    P_1 = Q and P_{m+1} = Q + A'P_m A - A'P_m B (R + B'P_m B)^{-1} B'P_m A,
    with no terminal weight. K_m is the first-move gain of the m-stage
    problem: u = -K_m x, so K_1 = 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b, q, r = lq.a, lq.b, lq.q, lq.r
    ps: list[np.ndarray] = []
    ks: list[np.ndarray] = []
    p_prev = np.zeros_like(q)  # zero-stage cost-to-go
    for _ in range(n):
        innov = r + b.T @ p_prev @ b
        try:
            gain = np.linalg.solve(innov, b.T @ p_prev @ a)
        except np.linalg.LinAlgError as exc:
            raise SingularInnovation(str(exc)) from exc
        p = q + a.T @ p_prev @ a - a.T @ p_prev @ b @ gain
        ks.append(gain)
        ps.append(p)
        p_prev = p
    return ps, ks


def riccati_value(lq: LqSystem, n: int, x) -> float:
    """Exact n-stage optimal value x'P_n x from the backward recursion."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = riccati_matrices(lq, n)[0][-1]
    return float(x @ p @ x)


def riccati_openloop(lq: LqSystem, n: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Optimal open-loop controls and trajectory of the n-stage problem."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, ks = riccati_matrices(lq, n)
    states = np.empty((n + 1, lq.state_dim))
    controls = np.empty((n, lq.control_dim))
    states[0] = x
    for k in range(n):
        u = -ks[n - 1 - k] @ states[k]  # remaining tail has n-k stages
        controls[k] = u
        states[k + 1] = lq.a @ states[k] + lq.b @ u
    return controls, states


# ---------------------------------------------------------------------------
# Finite-control systems and the enumeration oracle
# ---------------------------------------------------------------------------

_ENUMERATION_CAP = 1_000_000


@dataclass(frozen=True)
class FiniteControlSystem:
    """Explicit-discrete dynamics with a finite set of admissible controls."""

    dynamics: object
    stage_cost: object
    controls: tuple

    def __post_init__(self):
        if len(self.controls) == 0:
            raise ValueError("control set must be nonempty")
        object.__setattr__(
            self,
            "controls",
            tuple(np.atleast_1d(np.asarray(u, dtype=float)) for u in self.controls),
        )

    def hull_model(self, name: str = "finite-hull") -> SystemModel:
        """Continuous relaxation over the componentwise hull of the control set."""
        stacked = np.stack(self.controls)
        bounds = tuple(
            (float(stacked[:, j].min()), float(stacked[:, j].max()))
            for j in range(stacked.shape[1])
        )
        probe = np.atleast_1d(np.asarray(self.dynamics(np.zeros(1), self.controls[0]), float))
        return SystemModel(
            state_dim=probe.size,
            control_dim=stacked.shape[1],
            dynamics=lambda x, u: np.atleast_1d(np.asarray(self.dynamics(x, u), float)),
            stage_cost=lambda x, u: float(self.stage_cost(x, u)),
            control_bounds=bounds,
            name=name,
        )


def dp_enumerate(sys: FiniteControlSystem, x0, n: int) -> tuple[float, np.ndarray]:
    """Exact minimum cost over all length-n control sequences, by full search.

    Ties break toward the lexicographically smallest sequence of control
    values. Refuses instances above one million leaves.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    controls = sorted(sys.controls, key=tuple)
    if len(controls) ** n > _ENUMERATION_CAP:
        raise EnumerationTooLarge(
            f"{len(controls)}^{n} sequences exceed the {_ENUMERATION_CAP} leaf cap"
        )
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    best_value = math.inf
    best_seq: list[np.ndarray] | None = None
    prefix: list[np.ndarray] = []

    def dfs(x, depth, cost):
        nonlocal best_value, best_seq
        if depth == n:
            if cost < best_value:
                best_value = cost
                best_seq = list(prefix)
            return
        for u in controls:
            c = float(sys.stage_cost(x, u))
            prefix.append(u)
            dfs(np.atleast_1d(np.asarray(sys.dynamics(x, u), float)), depth + 1, cost + c)
            prefix.pop()

    dfs(x0, 0, 0.0)
    assert best_seq is not None
    return best_value, np.stack(best_seq)


def grid_rollout_cost(sys: FiniteControlSystem, model: SystemModel, x0, controls) -> float:
    """Cost of a control sequence after rounding each entry to the grid."""
    grid = np.stack(sys.controls)
    rounded = []
    for u in np.atleast_2d(np.asarray(controls, dtype=float)):
        dist = np.linalg.norm(grid - u, axis=1)
        rounded.append(grid[int(np.argmin(dist))])
    _, costs = rollout_with_cost(model, x0, np.stack(rounded))
    return float(np.sum(costs))
