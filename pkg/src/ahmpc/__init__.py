"""Adaptive-horizon nonlinear MPC with online suboptimality certification."""

from .adaptation import (
    AdaptationConfig,
    AdaptationPlan,
    ShorteningPlan,
    adapt_step,
    local_alpha,
    prolong,
    shorten_apriori,
    shorten_certified,
)
from .benchmarks import (
    FiniteControlSystem,
    LqSystem,
    crane_model,
    dp_enumerate,
    lq_model,
    riccati_matrices,
    riccati_openloop,
    riccati_value,
    scalar_lq,
)
from .closed_loop import (
    ClosedLoopTrace,
    StepRecord,
    StopRule,
    VerificationReport,
    run_adaptive,
    run_fixed,
    verify_trace,
)
from .errors import (
    AhmpcError,
    ConfigError,
    EnumerationTooLarge,
    EquilibriumReached,
    HorizonCapReached,
    IntegrationFailure,
    NoFeasibleGamma,
    NonFiniteObjective,
    SingularInnovation,
    SolverFailure,
)
from .ocp import OcpInstance, OcpSolution, OcpSolver, SolverParams, feedback, solve, value
from .suboptimality import (
    EQUILIBRIUM_THRESHOLD,
    SuboptimalityReport,
    a_posteriori_alpha,
    a_posteriori_report,
    a_priori_alpha,
    gamma_bar,
    gamma_fit,
)
from .systems import (
    SampledOde,
    SystemModel,
    integrate_zoh,
    rollout,
    rollout_with_cost,
    sampled_system,
    step,
    step_with_cost,
)

__version__ = "0.1.0"
