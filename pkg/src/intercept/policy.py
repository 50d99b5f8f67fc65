"""Time-allocation policies and iterative traversal-time adaptation.

A policy maps a waypoint sequence and an initial state to per-segment
durations. Two implementations ship here: a distance-over-speed baseline
and one backed by the full time-allocation optimizer. On top of either,
``adapt_traversal_time`` retimes the minimum-time output so the trajectory
arrives exactly at a requested goal time, using the time-scaling invariance
of the snap-minimal QP: it queries the policy with the boundary state sped
up by the current scale factor and stretches the returned durations by the
same factor, iterating the factor to a fixed point. A converged factor
below one means the goal time is earlier than the minimum achievable
traversal time, which is the planner's reachability test.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass

import numpy as np

from .core import (
    BoundaryState,
    DynamicLimits,
    PiecewisePolynomialTrajectory,
    SnapCostWeights,
    TimeAllocation,
    WaypointSequence,
    dynamic_limit_ratio,
)
from .minsnap import InfeasibleAllocationError, optimize_time_allocation, scale_boundary


class TimeAllocationPolicy(abc.ABC):
    """Maps (waypoints, boundary state) to per-segment durations."""

    @abc.abstractmethod
    def allocate(self, waypoints: WaypointSequence, boundary: BoundaryState) -> TimeAllocation:
        """Return strictly positive durations, one per waypoint segment."""

    def allocate_refined(self, waypoints: WaypointSequence, boundary: BoundaryState,
                         hint: TimeAllocation | None = None) -> TimeAllocation:
        """Like ``allocate`` but may warm-start from a nearby solution.

        The default ignores the hint. Policies whose outputs are noisy
        across close queries (re-optimization jitter) override this so the
        traversal-time iteration sees a smooth response near its fixed
        point.
        """
        return self.allocate(waypoints, boundary)


def baseline_allocate(waypoints: WaypointSequence, boundary: BoundaryState,
                      v_max: float = 2.5) -> TimeAllocation:
    """Distance between consecutive waypoints divided by a fixed speed."""
    if v_max <= 0.0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    return TimeAllocation(waypoints.segment_lengths() / v_max)


class BaselinePolicy(TimeAllocationPolicy):
    """The no-optimization reference policy: time = distance / v_max."""

    def __init__(self, v_max: float = 2.5):
        if v_max <= 0.0:
            raise ValueError(f"v_max must be positive, got {v_max}")
        self.v_max = v_max

    def allocate(self, waypoints, boundary):
        return baseline_allocate(waypoints, boundary, self.v_max)


class OptimizerPolicy(TimeAllocationPolicy):
    """Policy that runs the bi-level time-allocation optimizer per query.

    Queries are quantized (waypoints to ``position_quantum`` meters,
    boundary derivatives to ``boundary_quantum``) and memoized, so the
    replanning loop, which sees near-identical queries cycle after cycle,
    mostly hits the cache. The optimizer runs on the quantized inputs,
    which keeps each answer a pure function of its cache key.
    """

    def __init__(self, weights: SnapCostWeights, limits: DynamicLimits,
                 max_evaluations: int = 60, position_quantum: float = 0.05,
                 boundary_quantum: float = 0.05):
        self.weights = weights
        self.limits = limits
        self.max_evaluations = max_evaluations
        self.position_quantum = position_quantum
        self.boundary_quantum = boundary_quantum
        self._cache: dict[tuple, TimeAllocation] = {}
        self._lock = threading.Lock()

    def _quantize(self, waypoints: WaypointSequence, boundary: BoundaryState):
        pq, bq = self.position_quantum, self.boundary_quantum
        points = np.round(waypoints.positions() / pq) * pq
        yaw0 = round(waypoints.start_yaw / bq) * bq
        yawg = None if waypoints.goal_yaw is None else round(waypoints.goal_yaw / bq) * bq
        state = np.round(np.concatenate([
            boundary.velocity, boundary.acceleration, boundary.jerk, boundary.snap,
            [boundary.yaw_rate, boundary.yaw_accel],
        ]) / bq) * bq
        try:
            quant_wps = WaypointSequence(
                start=points[0], goal=points[-1],
                intermediate=tuple(points[1:-1]),
                start_yaw=yaw0, goal_yaw=yawg,
            )
        except ValueError:
            # quantization collapsed neighboring waypoints; fall back to exact
            return None
        quant_boundary = BoundaryState(
            velocity=state[0:3], acceleration=state[3:6], jerk=state[6:9],
            snap=state[9:12], yaw_rate=float(state[12]), yaw_accel=float(state[13]),
        )
        key = (tuple(points.reshape(-1)), yaw0, yawg, tuple(state))
        return key, quant_wps, quant_boundary

    def allocate(self, waypoints, boundary):
        quantized = self._quantize(waypoints, boundary)
        if quantized is None:
            return optimize_time_allocation(
                waypoints, boundary, self.weights, self.limits, self.max_evaluations)
        key, quant_wps, quant_boundary = quantized
        with self._lock:
            cached = self._cache.get(key)
        if cached is None:
            try:
                cached = ("ok", optimize_time_allocation(
                    quant_wps, quant_boundary, self.weights, self.limits, self.max_evaluations))
            except InfeasibleAllocationError as exc:
                cached = ("infeasible", exc.best_allocation)
            with self._lock:
                self._cache[key] = cached
        status, allocation = cached
        if status == "infeasible":
            raise InfeasibleAllocationError(
                "no feasible time allocation for this query", best_allocation=allocation)
        return allocation

    def allocate_refined(self, waypoints, boundary, hint=None):
        if hint is None:
            return self.allocate(waypoints, boundary)
        # exact inputs, warm start, reduced budget: smooth across close queries
        return optimize_time_allocation(
            waypoints, boundary, self.weights, self.limits,
            max_evaluations=max(20, self.max_evaluations // 2), initial=hint)


def check_feasibility(traj: PiecewisePolynomialTrajectory, limits: DynamicLimits,
                      samples_per_segment: int = 100) -> bool:
    """Sampled dynamic-limit check standing in for controller trackability."""
    return dynamic_limit_ratio(traj, limits, samples_per_segment) <= 1.0


def time_reduction(x: TimeAllocation, x_ms: TimeAllocation) -> float:
    """Relative total-time reduction of ``x`` against a reference allocation."""
    return 1.0 - x.total_time / x_ms.total_time


@dataclass(frozen=True)
class AdaptationResult:
    """Outcome of the traversal-time fixed-point iteration.

    ``feasible`` records the reachability test: the goal time is achievable
    iff the converged scale factor is at least one (scaling down a
    minimum-time trajectory would violate the dynamic limits).
    """

    alpha_goal: float
    allocation: TimeAllocation
    feasible: bool
    iterations: int
    converged: bool
    achieved_time: float


def adapt_traversal_time(policy: TimeAllocationPolicy, waypoints: WaypointSequence,
                         boundary: BoundaryState, t_goal: float,
                         tol: float = 1e-3, max_iter: int = 10) -> AdaptationResult:
    """Retime the policy output so the total time matches ``t_goal``.

    Each iteration queries the policy at the boundary state sped up by the
    current factor (order-k derivatives multiplied by the factor to the
    k-th power) and stretches the result back by the same factor, then
    moves the factor toward ``t_goal`` over the achieved total. For a zero
    boundary state the first iteration is already exact. The multiplicative
    update is damped whenever the time error stops contracting, and once
    the error is small the policy is queried through ``allocate_refined``
    with the previous answer as a warm start, so re-optimization jitter
    does not mask the fixed point. When the loop does not converge within
    ``max_iter`` iterations, the closest iterate is returned with
    ``converged=False``.
    """
    if t_goal <= 0.0:
        raise ValueError(f"t_goal must be positive, got {t_goal}")
    reference = policy.allocate(waypoints, boundary)
    total = reference.total_time
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError(f"policy returned a degenerate allocation (total {total})")

    alpha = t_goal / total
    damping = 1.0
    previous_error = None
    previous_query: TimeAllocation | None = None
    best: tuple[float, float, TimeAllocation, float, int] | None = None
    for iteration in range(1, max_iter + 1):
        sped_up = scale_boundary(boundary, 1.0 / alpha)
        try:
            if previous_query is not None and previous_error is not None and previous_error < 0.05:
                queried = policy.allocate_refined(waypoints, sped_up, hint=previous_query)
            else:
                queried = policy.allocate(waypoints, sped_up)
        except InfeasibleAllocationError as exc:
            # the sped-up intermediate state can violate the limits even
            # though the rescaled final trajectory is fine; keep iterating
            # on the policy's best effort and let the planner's feasibility
            # gates judge the end result
            queried = exc.best_allocation
        previous_query = queried
        allocation = TimeAllocation(alpha * queried.segment_durations)
        achieved = allocation.total_time
        error = abs(achieved - t_goal) / t_goal
        if best is None or error < best[0]:
            best = (error, alpha, allocation, achieved, iteration)
        if error <= tol:
            return AdaptationResult(
                alpha_goal=alpha, allocation=allocation, feasible=alpha >= 1.0,
                iterations=iteration, converged=True, achieved_time=achieved,
            )
        if previous_error is not None and error >= 0.7 * previous_error:
            damping = max(0.5 * damping, 0.1)
        previous_error = error
        alpha *= (t_goal / achieved) ** damping

    _, alpha_b, allocation_b, achieved_b, iteration_b = best
    return AdaptationResult(
        alpha_goal=alpha_b, allocation=allocation_b, feasible=alpha_b >= 1.0,
        iterations=max_iter, converged=False, achieved_time=achieved_b,
    )
