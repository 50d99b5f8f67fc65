"""Minimum-snap polynomial trajectory optimization.

Two nested problems live here. The inner problem is an equality-constrained
QP: given per-segment durations, find the polynomial coefficients that
minimize the integral of squared snap (and squared yaw acceleration)
subject to waypoint interpolation, the initial higher-order state, and
C4/C2 continuity at segment joints. It is solved exactly through the dense
symmetric KKT system. The outer problem searches over the durations
themselves, trading total time against smoothness under dynamic limits.

The module also provides the time-scaling transform pair: stretching all
durations by ``alpha`` while dividing the order-k boundary derivatives by
``alpha**k`` reparameterizes the same spatial curve, which the planner
exploits to retime trajectories without re-optimizing their shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .core import (
    POSITION_COEFFS,
    YAW_COEFFS,
    BoundaryState,
    DynamicLimits,
    NumericalError,
    PiecewisePolynomialTrajectory,
    SnapCostWeights,
    TimeAllocation,
    WaypointSequence,
    _limit_ratio_grid,
)

_POS_ORDERS = 5   # continuity/boundary through order 4
_YAW_ORDERS = 3   # continuity/boundary through order 2


class InfeasibleAllocationError(RuntimeError):
    """No duration vector satisfying the dynamic limits was found.

    ``best_allocation`` holds the lowest-cost iterate encountered, which
    violates the limits but may still be useful diagnostics.
    """

    def __init__(self, message: str, best_allocation: TimeAllocation | None = None):
        super().__init__(message)
        self.best_allocation = best_allocation


def _basis_rows(n: int, orders: int, u: float) -> np.ndarray:
    """Rows of the order-j derivative of the monomial basis at u, j < orders."""
    rows = np.zeros((orders, n))
    for j in range(orders):
        for k in range(j, n):
            scale = 1.0
            for i in range(k, k - j, -1):
                scale *= i
            rows[j, k] = scale * u ** (k - j)
    return rows


def _unit_gram(n: int, order: int) -> np.ndarray:
    """Gram matrix of the order-th basis derivatives on the unit interval."""
    gram = np.zeros((n, n))
    for j in range(order, n):
        fj = math.factorial(j) // math.factorial(j - order)
        for k in range(order, n):
            fk = math.factorial(k) // math.factorial(k - order)
            gram[j, k] = fj * fk / (j + k - 2 * order + 1)
    return gram


def _gram_factors(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Factor and duration-exponent matrices for the local-time Gram form."""
    factors = np.zeros((n, n))
    exponents = np.zeros((n, n))
    for j in range(order, n):
        fj = math.factorial(j) // math.factorial(j - order)
        for k in range(order, n):
            fk = math.factorial(k) // math.factorial(k - order)
            factors[j, k] = fj * fk / (j + k - 2 * order + 1)
            exponents[j, k] = j + k - 2 * order + 1
    return factors, exponents

_B0_POS = _basis_rows(POSITION_COEFFS, _POS_ORDERS, 0.0)
_B1_POS = _basis_rows(POSITION_COEFFS, _POS_ORDERS, 1.0)
_B0_YAW = _basis_rows(YAW_COEFFS, _YAW_ORDERS, 0.0)
_B1_YAW = _basis_rows(YAW_COEFFS, _YAW_ORDERS, 1.0)
_GRAM_POS = _unit_gram(POSITION_COEFFS, 4)
_GRAM_YAW = _unit_gram(YAW_COEFFS, 2)
_GF_POS, _GE_POS = _gram_factors(POSITION_COEFFS, 4)
_GF_YAW, _GE_YAW = _gram_factors(YAW_COEFFS, 2)


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Inputs of one coefficient solve: geometry, initial state, durations."""

    waypoints: WaypointSequence
    boundary: BoundaryState
    time_allocation: TimeAllocation
    weights: SnapCostWeights = SnapCostWeights()

    def __post_init__(self):
        if len(self.time_allocation) != self.waypoints.segment_count:
            raise ValueError(
                f"time allocation has {len(self.time_allocation)} segments, "
                f"waypoints define {self.waypoints.segment_count}"
            )


def _solve_kkt(kkt: np.ndarray, rhs: np.ndarray, a_mat: np.ndarray, b_vec: np.ndarray,
               n_vars: int, label: str) -> np.ndarray:
    # symmetric Jacobi equilibration: the snap blocks scale as d**-7, so raw
    # row scales span many orders of magnitude for uneven durations
    scale = 1.0 / np.sqrt(np.maximum(np.abs(kkt).max(axis=1), 1e-300))
    balanced = kkt * scale[:, None] * scale[None, :]
    try:
        with warnings.catch_warnings():
            # solution quality is judged by the constraint residual below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(balanced, rhs * scale[:, None] if rhs.ndim == 2 else rhs * scale,
                                     assume_a="sym", check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular {label} KKT system", condition=float(np.linalg.cond(kkt))) from exc
    sol = sol * (scale[:, None] if sol.ndim == 2 else scale)
    coeffs = sol[:n_vars]
    residual = np.abs(a_mat @ coeffs - b_vec).max()
    tol = 1e-6 * max(1.0, np.abs(b_vec).max())
    if not np.isfinite(residual) or residual > tol:
        raise NumericalError(
            f"ill-conditioned {label} KKT system, constraint residual {residual:.3e}",
            condition=float(np.linalg.cond(kkt)),
        )
    return coeffs


def _solve_position(durations: np.ndarray, points: np.ndarray, boundary: BoundaryState) -> np.ndarray:
    """Exact snap-minimal coefficients per axis, in normalized segment time."""
    m = durations.size
    n = POSITION_COEFFS
    nv = n * m
    nc = 6 * m
    # per-segment duration powers d**-j for the normalized derivative rows
    dinv = durations[:, None] ** -np.arange(_POS_ORDERS)[None, :]

    a_mat = np.zeros((nc, nv))
    b_mat = np.zeros((nc, 3))
    a_mat[0, :n] = _B0_POS[0]
    b_mat[0] = points[0]
    for j in range(1, _POS_ORDERS):
        a_mat[j, :n] = _B0_POS[j] * dinv[0, j]
        b_mat[j] = boundary.position_derivative(j)
    r = _POS_ORDERS
    for i in range(1, m):
        left = slice(n * (i - 1), n * i)
        right = slice(n * i, n * (i + 1))
        a_mat[r, left] = _B1_POS[0]
        b_mat[r] = points[i]
        a_mat[r + 1, right] = _B0_POS[0]
        b_mat[r + 1] = points[i]
        r += 2
        for j in range(1, _POS_ORDERS):
            a_mat[r, left] = _B1_POS[j] * dinv[i - 1, j]
            a_mat[r, right] = -_B0_POS[j] * dinv[i, j]
            r += 1
    a_mat[r, n * (m - 1):] = _B1_POS[0]
    b_mat[r] = points[m]

    kkt = np.zeros((nv + nc, nv + nc))
    scale = durations ** -7.0
    for i in range(m):
        kkt[n * i : n * (i + 1), n * i : n * (i + 1)] = _GRAM_POS * scale[i]
    kkt[:nv, nv:] = a_mat.T
    kkt[nv:, :nv] = a_mat
    rhs = np.zeros((nv + nc, 3))
    rhs[nv:] = b_mat

    coeffs = _solve_kkt(kkt, rhs, a_mat, b_mat, nv, "position")
    # back to segment-local time: c_k = c_hat_k / d**k
    local = coeffs.reshape(m, n, 3).transpose(0, 2, 1)
    return local / durations[:, None, None] ** np.arange(n)[None, None, :]


def _solve_yaw(durations: np.ndarray, boundary: BoundaryState,
               start_yaw: float, goal_yaw: float | None) -> np.ndarray:
    m = durations.size
    n = YAW_COEFFS
    nv = n * m
    nc = _YAW_ORDERS + _YAW_ORDERS * (m - 1) + (1 if goal_yaw is not None else 0)
    dinv = durations[:, None] ** -np.arange(_YAW_ORDERS)[None, :]

    a_mat = np.zeros((nc, nv))
    b_vec = np.zeros(nc)
    a_mat[0, :n] = _B0_YAW[0]
    b_vec[0] = start_yaw
    a_mat[1, :n] = _B0_YAW[1] * dinv[0, 1]
    b_vec[1] = boundary.yaw_rate
    a_mat[2, :n] = _B0_YAW[2] * dinv[0, 2]
    b_vec[2] = boundary.yaw_accel
    r = _YAW_ORDERS
    for i in range(1, m):
        left = slice(n * (i - 1), n * i)
        right = slice(n * i, n * (i + 1))
        for j in range(_YAW_ORDERS):
            a_mat[r, left] = _B1_YAW[j] * dinv[i - 1, j]
            a_mat[r, right] = -_B0_YAW[j] * dinv[i, j]
            r += 1
    if goal_yaw is not None:
        a_mat[r, n * (m - 1):] = _B1_YAW[0]
        b_vec[r] = goal_yaw

    kkt = np.zeros((nv + nc, nv + nc))
    scale = durations ** -3.0
    for i in range(m):
        kkt[n * i : n * (i + 1), n * i : n * (i + 1)] = _GRAM_YAW * scale[i]
    kkt[:nv, nv:] = a_mat.T
    kkt[nv:, :nv] = a_mat
    rhs = np.zeros(nv + nc)
    rhs[nv:] = b_vec

    coeffs = _solve_kkt(kkt, rhs, a_mat, b_vec, nv, "yaw")
    local = coeffs.reshape(m, n)
    return local / durations[:, None] ** np.arange(n)[None, :]


def solve_qp(problem: QpProblem) -> PiecewisePolynomialTrajectory:
    """Solve the inner QP for the snap-minimal trajectory.

    The solution interpolates every waypoint at its cumulative time, starts
    from the given boundary state, and is C4 in position and C2 in yaw at
    segment joints. Derivatives that are not pinned (interior joints, the
    trajectory end) are free and take their cost-minimizing values.

    Raises
    ------
    NumericalError
        If the KKT system is singular or its solution fails to satisfy the
        constraints to tolerance; carries a condition-number diagnostic.
    """
    durations = problem.time_allocation.segment_durations
    points = problem.waypoints.positions()
    pos = _solve_position(durations, points, problem.boundary)
    yaw = _solve_yaw(durations, problem.boundary,
                     problem.waypoints.start_yaw, problem.waypoints.goal_yaw)
    return PiecewisePolynomialTrajectory(durations.copy(), pos, yaw)


def snap_cost(traj: PiecewisePolynomialTrajectory, weights: SnapCostWeights) -> float:
    """Exact smoothness cost: weighted integrals of squared snap and yaw accel.

    Evaluated in closed form from the polynomial coefficients; no quadrature.
    """
    d = traj.durations
    n_pos = traj.position_coeffs.shape[2]
    n_yaw = traj.yaw_coeffs.shape[1]
    gf, ge = (_GF_POS, _GE_POS) if n_pos == POSITION_COEFFS else _gram_factors(n_pos, 4)
    gram = gf[None] * d[:, None, None] ** ge[None]
    pos_integral = float(np.einsum("mjk,maj,mak->", gram, traj.position_coeffs, traj.position_coeffs))
    gf, ge = (_GF_YAW, _GE_YAW) if n_yaw == YAW_COEFFS else _gram_factors(n_yaw, 2)
    gram = gf[None] * d[:, None, None] ** ge[None]
    yaw_integral = float(np.einsum("mjk,mj,mk->", gram, traj.yaw_coeffs, traj.yaw_coeffs))
    return weights.mu_r * pos_integral + weights.mu_psi * yaw_integral


def scale_boundary(state: BoundaryState, alpha: float) -> BoundaryState:
    """Scale a boundary state for a time stretch by ``alpha``.

    The order-k position derivative is multiplied by ``alpha**-k``; yaw rate
    and yaw acceleration by ``alpha**-1`` and ``alpha**-2``.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return BoundaryState(
        velocity=state.velocity / alpha,
        acceleration=state.acceleration / alpha**2,
        jerk=state.jerk / alpha**3,
        snap=state.snap / alpha**4,
        yaw_rate=state.yaw_rate / alpha,
        yaw_accel=state.yaw_accel / alpha**2,
    )


def scale_trajectory(traj: PiecewisePolynomialTrajectory, alpha: float) -> PiecewisePolynomialTrajectory:
    """Reparameterize time by ``t -> t / alpha``, keeping the path identical.

    The scaled trajectory satisfies ``scaled(alpha * t) == original(t)``
    exactly; durations grow by ``alpha`` and the order-k coefficients shrink
    by ``alpha**-k``.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    n_pos = traj.position_coeffs.shape[2]
    n_yaw = traj.yaw_coeffs.shape[1]
    return PiecewisePolynomialTrajectory(
        traj.durations * alpha,
        traj.position_coeffs / alpha ** np.arange(n_pos)[None, None, :],
        traj.yaw_coeffs / alpha ** np.arange(n_yaw)[None, :],
    )


def optimize_time_allocation(
    waypoints: WaypointSequence,
    boundary: BoundaryState,
    weights: SnapCostWeights,
    limits: DynamicLimits,
    max_evaluations: int = 200,
    samples_per_segment: int = 100,
    initial: TimeAllocation | None = None,
) -> TimeAllocation:
    """Search durations minimizing ``rho * total_time + snap_cost`` under limits.

    Derivative-free outer loop: a distance/velocity seed, a coordinate-wise
    log-space pass, Nelder-Mead on log durations, then a +-1% coordinate
    polish so the result is a local minimum at that resolution. Infeasible
    iterates are penalized in proportion to their worst limit violation.

    Raises
    ------
    InfeasibleAllocationError
        If no evaluated allocation satisfies the dynamic limits; the error
        carries the best infeasible iterate.
    """
    m = waypoints.segment_count
    lengths = waypoints.segment_lengths()
    penalty = 1e9

    evals = 0
    best_feasible: tuple[float, np.ndarray] | None = None
    best_any: tuple[float, np.ndarray] | None = None

    def evaluate(x: np.ndarray) -> float:
        nonlocal evals, best_feasible, best_any
        evals += 1
        x = np.clip(x, 1e-4, 1e4)
        try:
            traj = PiecewisePolynomialTrajectory(
                x,
                _solve_position(x, waypoints.positions(), boundary),
                _solve_yaw(x, boundary, waypoints.start_yaw, waypoints.goal_yaw),
            )
        except NumericalError:
            # numerically intractable corner of the search space
            return penalty * (1.0 + float(x.sum()))
        base = weights.rho * float(x.sum()) + snap_cost(traj, weights)
        ratios = _limit_ratio_grid(traj, limits, samples_per_segment)
        strict = float(ratios.max())
        # the t=0 sample is pinned by the boundary state, so the penalty
        # tracks only the violations the durations can actually influence
        shape = float(ratios.flat[1:].max())
        value = base if shape <= 1.0 else base + penalty * shape
        if strict <= 1.0 and (best_feasible is None or value < best_feasible[0]):
            best_feasible = (value, x.copy())
        if best_any is None or value < best_any[0]:
            best_any = (value, x.copy())
        return value

    if initial is not None:
        x0 = initial.segment_durations.astype(np.float64).copy()
    else:
        x0 = lengths / (0.5 * limits.max_speed)
    evaluate(x0)
    grow = 0
    while best_feasible is None and grow < 12 and evals < max_evaluations:
        x0 = x0 * 1.6
        evaluate(x0)
        grow += 1

    current = best_any[1].copy()
    current_value = best_any[0]
    for factor in (1.6, 1.25):
        for i in range(m):
            if evals >= max_evaluations:
                break
            for f in (factor, 1.0 / factor):
                trial = current.copy()
                trial[i] *= f
                value = evaluate(trial)
                if value < current_value:
                    current, current_value = trial, value

    polish_reserve = 4 * m + 4
    remaining = max_evaluations - evals - polish_reserve
    if remaining > m + 2:
        result = scipy.optimize.minimize(
            lambda z: evaluate(np.exp(z)),
            np.log(current),
            method="Nelder-Mead",
            options={"maxfev": remaining, "xatol": 1e-3, "fatol": 1e-8 * (1.0 + abs(current_value))},
        )
        if result.fun < current_value:
            current = np.clip(np.exp(result.x), 1e-4, 1e4)
            current_value = result.fun

    if best_feasible is None:
        raise InfeasibleAllocationError(
            "no feasible time allocation within the evaluation budget",
            best_allocation=TimeAllocation(best_any[1]),
        )

    # +-1% coordinate polish: descend while any perturbation of the best
    # feasible iterate improves it (evaluate() records improvements)
    for _ in range(8):
        round_value, round_x = best_feasible
        for i in range(m):
            for f in (0.99, 1.01):
                trial = round_x.copy()
                trial[i] *= f
                evaluate(trial)
        if best_feasible[0] >= round_value - 1e-12:
            break

    return TimeAllocation(best_feasible[1])
