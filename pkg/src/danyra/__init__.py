"""Anytime-feasible distributed resource allocation: simulator, oracles, metrics."""

from .engine import (
    AgentMessages,
    AgentState,
    RoundMessages,
    SwarmState,
    exchange_primary,
    init_state,
    iterate,
    lyapunov_metric,
    project_affine,
    project_decision,
    state_difference,
    step_auxiliary,
    step_dual,
    step_virtual_decision,
    step_virtual_queue,
)
from .errors import (
    ConfigError,
    DanyraError,
    DegenerateInstanceError,
    DivergenceError,
    InvalidInstanceError,
    ModeError,
    OracleFailureError,
    TopologyError,
    UnsupportedProblemError,
)
from .metrics import (
    BoundsReport,
    bounds_report,
    optimality_gap,
    recovery_iteration,
    slack_sum,
    violation_l1,
)
from .netsim import DisturbanceEvent, ExperimentPlan, Trace, apply_disturbance, run_experiment
from .oracle import (
    OracleSolution,
    kkt_residuals,
    reference_projected_gradient,
    solve_active_set,
    solve_equality,
)
from .problem import (
    EQUALITY,
    INEQUALITY,
    AgentSpec,
    BufferSchedule,
    CallableCost,
    ConditionCheck,
    ConditionReport,
    HyperParams,
    ProblemInstance,
    QuadraticCost,
    SpectralConstants,
    Topology,
    compute_projector,
    cost_gradient,
    cost_value,
    generate_instance,
    instance_from_json,
    instance_to_json,
    metropolis_weights,
    spectral_constants,
    topology_from_weights,
    validate_hyperparams,
)

__version__ = "0.1.0"
