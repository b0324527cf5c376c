"""Online estimators of the local suboptimality degree alpha.

The a posteriori estimator reads the relaxed Lyapunov inequality

    V_N(x) >= V_N(x_next) + alpha * l(x, u)

off the realized values: alpha = (V_N(x) - V_N(x_next)) / l(x, u). It needs
one extra optimal control solve per step (the value at the successor).

The a priori estimator instead fits the smallest constant gamma such that
along the current open-loop solution every tail value is bounded by
(gamma + 1) times a stage cost, and converts it into a guaranteed degree

    alpha = ((gamma + 1)^(N - N0) - gamma^(N - N0 + 2)) / (gamma + 1)^(N - N0),

valid whenever (gamma + 1)^(N - N0) > gamma^(N - N0 + 2). It is slightly
more conservative but cheap when N0 is small.

Stage costs below the equilibrium threshold make the ratios meaningless;
estimation then raises EquilibriumReached, which closed loops treat as
successful termination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import EquilibriumReached, NoFeasibleGamma
from .ocp import OcpSolution, OcpSolver

# Matches the closed-loop stop rule: below this stage cost the system is
# considered settled and decrease ratios are no longer meaningful.
EQUILIBRIUM_THRESHOLD = 1e-3


@dataclass(frozen=True)
class GammaComponent:
    """One candidate in the gamma fit: a tail-value/stage-cost ratio minus one."""

    kind: str               # "anchor" for the N0 window, "tail" for horizon-k terms
    k: int | None
    value: float


@dataclass(frozen=True)
class SuboptimalityReport:
    """Result of one alpha estimation."""

    alpha: float
    kind: str                                  # "a-posteriori" | "a-priori"
    gamma: float | None = None
    n0: int | None = None
    valid: bool = True
    components: tuple[GammaComponent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind == "a-priori" and (self.gamma is None or self.n0 is None):
            raise ValueError("a-priori reports carry gamma and n0")
        if self.kind == "a-posteriori" and (self.gamma is not None or self.n0 is not None):
            raise ValueError("a-posteriori reports carry neither gamma nor n0")


def a_posteriori_alpha(v_now: float, v_next: float, stage_cost: float,
                       threshold: float = EQUILIBRIUM_THRESHOLD) -> float:
    """Largest alpha satisfying the relaxed Lyapunov inequality at this step.

    May be <= 0 (no decrease) or > 1 (decrease exceeding the stage cost).
    """
    if stage_cost <= threshold:
        raise EquilibriumReached(stage_cost, threshold)
    return (v_now - v_next) / stage_cost


def a_posteriori_report(v_now: float, v_next: float, stage_cost: float,
                        threshold: float = EQUILIBRIUM_THRESHOLD) -> SuboptimalityReport:
    return SuboptimalityReport(
        alpha=a_posteriori_alpha(v_now, v_next, stage_cost, threshold),
        kind="a-posteriori",
    )


def gamma_fit(solution: OcpSolution, n0: int, solver: OcpSolver,
              threshold: float = EQUILIBRIUM_THRESHOLD,
              ) -> tuple[float, tuple[GammaComponent, ...]]:
    """Smallest gamma >= 0 bounding tail values along the open-loop solution.

    Two families of candidates, each of the form value/stage - 1:

    * anchor: the n0-stage value at the point n0 from the end, against the
      best (largest) one-step cost of the feedbacks with horizons 1..n0-1
      evaluated at the corresponding trailing points;
    * tail, for k = n0+1..N: the k-stage value at the point k from the end,
      against the first stage cost of that same problem.

    Auxiliary problems are warm-started from the stored control tail (which
    is optimal for them when the tail subproblem is exact). Negative
    candidates are floored at zero, where the a priori formula gives
    alpha = 1 continuously.
    """
    n = solution.horizon
    if not 2 <= n0 <= n:
        raise ValueError(f"need 2 <= n0 <= horizon, got n0={n0}, horizon={n}")
    traj = solution.trajectory
    controls = solution.controls
    components: list[GammaComponent] = []

    # Anchor window: denominator is the max over j = 2..n0 of the one-step
    # cost of the (j-1)-horizon feedback at the point j from the end.
    denom = -math.inf
    for j in range(2, n0 + 1):
        point = traj[n - j]
        aux = solver.solve(point, j - 1, warm_start=controls[n - j:])
        stage = float(aux.stage_costs[0])
        if stage <= threshold:
            raise EquilibriumReached(stage, threshold)
        denom = max(denom, stage)
    anchor_value = solver.value(traj[n - n0], n0, warm_start=controls[n - n0:])
    components.append(GammaComponent("anchor", None, anchor_value / denom - 1.0))

    for k in range(n0 + 1, n + 1):
        point = traj[n - k]
        aux = solver.solve(point, k, warm_start=controls[n - k:])
        stage = float(aux.stage_costs[0])
        if stage <= threshold:
            raise EquilibriumReached(stage, threshold)
        components.append(GammaComponent("tail", k, aux.value / stage - 1.0))

    gamma = max(0.0, max(c.value for c in components))
    return gamma, tuple(components)


def a_priori_alpha(gamma: float, n: int, n0: int) -> SuboptimalityReport:
    """Closed-form suboptimality degree from the controllability constant gamma.

    Uses log-domain arithmetic when the powers would overflow; alpha > 0
    exactly when the validity condition holds. An invalid pair is reported,
    not raised.
    """
    if n < n0 or n0 < 2:
        raise ValueError(f"need n >= n0 >= 2, got n={n}, n0={n0}")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    d = n - n0
    if gamma == 0.0:
        alpha, valid = 1.0, True
    else:
        log_pow = (d + 2) * math.log(gamma)
        log_base = d * math.log1p(gamma)
        if max(abs(log_pow), abs(log_base)) < 300.0:
            num = (gamma + 1.0) ** d
            sub = gamma ** (d + 2)
            alpha = (num - sub) / num
            valid = num > sub
        else:
            alpha = 1.0 - math.exp(log_pow - log_base) if log_pow - log_base < 700 else -math.inf
            valid = log_base > log_pow
    return SuboptimalityReport(alpha=alpha, kind="a-priori", gamma=gamma, n0=n0, valid=valid)


def gamma_bar(alpha_bar: float, n: int, n0: int, tol: float = 1e-10) -> float:
    """Largest gamma whose a priori degree still meets alpha_bar, by bisection.

    The degree is strictly decreasing in gamma (for gamma > 0 at fixed
    horizon), so bisection on a doubling bracket is exact to tol.
    """
    if not 0.0 < alpha_bar < 1.0:
        raise ValueError("alpha_bar must lie in (0, 1)")
    if a_priori_alpha(0.0, n, n0).alpha < alpha_bar:
        raise NoFeasibleGamma(f"gamma = 0 fails alpha_bar = {alpha_bar}")
    lo, hi = 0.0, 1.0
    while a_priori_alpha(hi, n, n0).alpha >= alpha_bar:
        lo, hi = hi, hi * 2.0
        if hi > 1e15:  # pragma: no cover - alpha drops below any bound well before this
            return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if a_priori_alpha(mid, n, n0).alpha >= alpha_bar:
            lo = mid
        else:
            hi = mid
    return lo
