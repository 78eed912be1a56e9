"""Rollout event-triggered control of LTI plants under a token bucket."""
from .controllers import TTC, ClassicalETC, RolloutETC, etc_step, rollout_step, ttc_step
from .errors import (
    InfeasibleTransmission,
    NotControllable,
    NoConvergence,
    NotConverged,
    NumericalError,
    OcpInfeasible,
    ParseError,
    RolloutETCError,
    SingularHessian,
    ValidationError,
)
from .ncs import (
    Box,
    OverallInput,
    OverallState,
    PlantModel,
    TokenBucketSpec,
    base_period,
    bucket_step,
    in_constraint_set,
    overall_step,
    stage_cost,
)
from .ocp import OcpParams, OcpSolution, OcpSolver, condense, enumerate_schedules, horizon_at, solve_ocp
from .qp import DenseQP, QpSolution, QpStatus, solve_active_set, solve_unconstrained
from .sim import (
    SimConfig,
    SimTrace,
    bucket_convergence_check,
    etc_sigma_search,
    infinite_cost_estimate,
    run_closed_loop,
)
from .terminal import (
    LiftedSystem,
    TerminalIngredients,
    Variant,
    build_lifted,
    solve_are_cross,
    synthesize,
    terminal_membership,
    variant1_ingredients,
    variant2_ingredients,
    verify_cost_decrease,
)

__version__ = "0.1.0"
