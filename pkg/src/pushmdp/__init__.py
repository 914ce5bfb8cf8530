"""Average-cost planning and simulation for an energy-harvesting small cell
that serves user requests by unicast and proactively pushes popular content.
"""

from .model import (
    Action,
    CalibrationError,
    DistanceGrid,
    RadioParams,
    SystemParams,
    SystemState,
    calibrate_radio,
    cumulative_popularity,
    required_power,
    zipf_pmf,
)
from .policies import (
    ThresholdProfile,
    non_push_optimal,
    threshold_profile,
    unicast_priority,
    unicast_priority_table,
)
from .sim import SimConfig, SimMetrics, SimulationError, simulate, sweep
from .solver import (
    ConvergenceError,
    OracleResult,
    PolicyIterationResult,
    PolicyTable,
    SingularPolicyError,
    ValueSolution,
    bellman_residual,
    brute_force_oracle,
    policy_evaluation,
    policy_improvement,
    policy_iteration,
    relative_value_iteration,
)
from .transition import (
    ArrivalPmf,
    KernelReport,
    TransitionKernel,
    build_kernel,
    validate_kernel,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ArrivalPmf",
    "CalibrationError",
    "ConvergenceError",
    "DistanceGrid",
    "KernelReport",
    "OracleResult",
    "PolicyIterationResult",
    "PolicyTable",
    "RadioParams",
    "SimConfig",
    "SimMetrics",
    "SimulationError",
    "SingularPolicyError",
    "SystemParams",
    "SystemState",
    "ThresholdProfile",
    "TransitionKernel",
    "ValueSolution",
    "bellman_residual",
    "brute_force_oracle",
    "build_kernel",
    "calibrate_radio",
    "cumulative_popularity",
    "non_push_optimal",
    "policy_evaluation",
    "policy_improvement",
    "policy_iteration",
    "relative_value_iteration",
    "required_power",
    "simulate",
    "sweep",
    "threshold_profile",
    "unicast_priority",
    "unicast_priority_table",
    "validate_kernel",
    "zipf_pmf",
    "__version__",
]
