import numpy as np
import pytest

from intercept.core import (
    BoundaryState,
    DynamicLimits,
    SnapCostWeights,
    TimeAllocation,
    WaypointSequence,
)
from intercept.minsnap import QpProblem, solve_qp


def random_waypoints(rng, n_segments, box=5.0, min_gap=0.5, with_yaw=False):
    """Random waypoint sequence with a minimum spacing between neighbors."""
    points = [rng.uniform(-box, box, 3)]
    while len(points) < n_segments + 1:
        step = rng.uniform(-box / 2, box / 2, 3)
        if np.linalg.norm(step) < min_gap:
            continue
        points.append(points[-1] + step)
    return WaypointSequence(
        start=points[0],
        goal=points[-1],
        intermediate=tuple(points[1:-1]),
        start_yaw=float(rng.uniform(-1, 1)) if with_yaw else 0.0,
        goal_yaw=float(rng.uniform(-1, 1)) if with_yaw else None,
    )


def random_boundary(rng, scale=1.0):
    return BoundaryState(
        velocity=rng.uniform(-scale, scale, 3),
        acceleration=rng.uniform(-scale, scale, 3),
        jerk=rng.uniform(-scale, scale, 3),
        snap=rng.uniform(-scale, scale, 3),
        yaw_rate=float(rng.uniform(-scale, scale)),
        yaw_accel=float(rng.uniform(-scale, scale)),
    )


def random_allocation(rng, n_segments, low=0.5, high=2.0):
    return TimeAllocation(rng.uniform(low, high, n_segments))


def random_qp_trajectory(rng, n_segments=None, with_boundary=True):
    """A valid trajectory produced by the QP solver on random inputs."""
    n_segments = n_segments or int(rng.integers(1, 5))
    wps = random_waypoints(rng, n_segments, with_yaw=True)
    boundary = random_boundary(rng, 0.5) if with_boundary else BoundaryState.zero()
    alloc = random_allocation(rng, n_segments)
    return solve_qp(QpProblem(wps, boundary, alloc, SnapCostWeights()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def weights():
    return SnapCostWeights()


@pytest.fixture
def limits():
    return DynamicLimits(max_speed=5.0, max_accel=12.0, max_yaw_rate=6.0)
