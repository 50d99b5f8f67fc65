"""Online trajectory planning and closed-loop simulation for drone interception."""

from .core import (
    BoundaryState,
    DynamicLimits,
    NumericalError,
    PiecewisePolynomialTrajectory,
    SnapCostWeights,
    TimeAllocation,
    VehicleState,
    WaypointSequence,
    boundary_state_at,
    dynamic_limit_ratio,
)
from .minsnap import (
    InfeasibleAllocationError,
    QpProblem,
    optimize_time_allocation,
    scale_boundary,
    scale_trajectory,
    snap_cost,
    solve_qp,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryState",
    "DynamicLimits",
    "InfeasibleAllocationError",
    "NumericalError",
    "PiecewisePolynomialTrajectory",
    "QpProblem",
    "SnapCostWeights",
    "TimeAllocation",
    "VehicleState",
    "WaypointSequence",
    "boundary_state_at",
    "dynamic_limit_ratio",
    "optimize_time_allocation",
    "scale_boundary",
    "scale_trajectory",
    "snap_cost",
    "solve_qp",
    "__version__",
]
