"""Exception types shared across the toolkit."""


class AhmpcError(Exception):
    """Base class for all toolkit errors."""


class IntegrationFailure(AhmpcError):
    """The adaptive step controller underflowed its minimum step size.

    Usually signals stiff or singular dynamics (e.g. a rope length
    approaching zero in the crane model).
    """


class NonFiniteObjective(AhmpcError):
    """The shooting objective became non-finite; the dynamics blew up.

    Callers should treat the (initial state, horizon) pair as infeasible.
    """


class SolverFailure(AhmpcError):
    """An auxiliary optimal control solve failed irrecoverably."""


class EquilibriumReached(AhmpcError):
    """Stage cost fell below the equilibrium threshold.

    Raised by the suboptimality estimators when the denominator stage cost
    is too small to be meaningful; closed loops treat this as successful
    termination rather than as a failure.
    """

    def __init__(self, stage_cost: float, threshold: float):
        super().__init__(
            f"stage cost {stage_cost:.3e} below equilibrium threshold {threshold:.1e}"
        )
        self.stage_cost = stage_cost
        self.threshold = threshold


class HorizonCapReached(AhmpcError):
    """No horizon up to the configured cap achieved the required decrease.

    Carries the per-horizon suboptimality estimates seen during the search
    so the failure can be diagnosed instead of silently ignored.
    """

    def __init__(self, message: str, attempts: list[tuple[int, float]] | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class NoFeasibleGamma(AhmpcError):
    """No gamma satisfies the requested suboptimality bound (should not occur)."""


class EnumerationTooLarge(AhmpcError):
    """Exhaustive control enumeration would exceed the leaf cap."""


class SingularInnovation(AhmpcError):
    """The Riccati innovation term R + B'PB is singular."""


class ConfigError(AhmpcError):
    """An experiment configuration file or override failed to validate."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        loc = []
        if field is not None:
            loc.append(f"field '{field}'")
        if line is not None:
            loc.append(f"line {line}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.line = line
        self.field = field
