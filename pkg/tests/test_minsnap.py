import numpy as np
import pytest

from intercept.core import (
    BoundaryState,
    DynamicLimits,
    PiecewisePolynomialTrajectory,
    SnapCostWeights,
    TimeAllocation,
    WaypointSequence,
    dynamic_limit_ratio,
)
from intercept.minsnap import (
    InfeasibleAllocationError,
    QpProblem,
    optimize_time_allocation,
    scale_boundary,
    scale_trajectory,
    snap_cost,
    solve_qp,
)

from conftest import random_allocation, random_boundary, random_waypoints
from oracles import (
    assemble_position_axis,
    nullspace_equality_qp,
    quadrature_snap_cost,
)


def boundary_derivs_for_axis(boundary, axis):
    return [boundary.position_derivative(order)[axis] for order in range(1, 5)]


class TestSolveQp:
    def test_collinear_axes_stay_zero(self):
        wps = WaypointSequence(start=[0, 0, 0], goal=[2, 0, 0], intermediate=([1, 0, 0],))
        traj = solve_qp(QpProblem(wps, BoundaryState.zero(), TimeAllocation([1.0, 1.0])))
        ts = np.linspace(0, 2, 50)
        pos = traj.sample_position(ts)
        assert np.abs(pos[:, 1:]).max() < 1e-10

    def test_matches_nullspace_oracle_single_segment(self):
        wps = WaypointSequence(start=[0, 0, 0], goal=[1, 0, 0])
        traj = solve_qp(QpProblem(wps, BoundaryState.zero(), TimeAllocation([1.0])))
        a_mat, b_vec, q_mat = assemble_position_axis([1.0], [0.0, 1.0], [0, 0, 0, 0])
        expected = nullspace_equality_qp(q_mat, a_mat, b_vec)
        np.testing.assert_allclose(traj.position_coeffs[0, 0], expected, atol=1e-8)

    def test_matches_nullspace_oracle_random(self, rng):
        for _ in range(5):
            m = int(rng.integers(1, 4))
            wps = random_waypoints(rng, m, box=2.0)
            boundary = random_boundary(rng, 0.5)
            alloc = random_allocation(rng, m)
            traj = solve_qp(QpProblem(wps, boundary, alloc))
            points = wps.positions()
            for axis in range(3):
                a_mat, b_vec, q_mat = assemble_position_axis(
                    alloc.segment_durations, points[:, axis],
                    boundary_derivs_for_axis(boundary, axis),
                )
                expected = nullspace_equality_qp(q_mat, a_mat, b_vec)
                got = traj.position_coeffs[:, axis, :].reshape(-1)
                np.testing.assert_allclose(got, expected, atol=1e-8)

    def test_interpolates_interior_waypoints(self, rng):
        for _ in range(10):
            m = int(rng.integers(2, 6))
            wps = random_waypoints(rng, m)
            alloc = random_allocation(rng, m)
            traj = solve_qp(QpProblem(wps, random_boundary(rng, 0.5), alloc))
            cum = np.cumsum(alloc.segment_durations)
            points = wps.positions()
            for i in range(1, m):
                pos, _ = traj.evaluate(cum[i - 1], 0)
                assert np.linalg.norm(pos - points[i]) < 1e-8

    def test_boundary_state_is_pinned(self, rng):
        wps = random_waypoints(rng, 2)
        boundary = random_boundary(rng, 1.0)
        traj = solve_qp(QpProblem(wps, boundary, TimeAllocation([1.0, 1.5])))
        for order in range(1, 5):
            got, _ = traj.evaluate(0.0, order)
            np.testing.assert_allclose(got, boundary.position_derivative(order), atol=1e-9)
        assert traj.evaluate(0.0, 1)[1] == pytest.approx(boundary.yaw_rate, abs=1e-9)
        assert traj.evaluate(0.0, 2)[1] == pytest.approx(boundary.yaw_accel, abs=1e-9)

    def test_goal_yaw_constraint(self):
        wps = WaypointSequence(start=[0, 0, 0], goal=[1, 0, 0], start_yaw=0.0, goal_yaw=0.8)
        traj = solve_qp(QpProblem(wps, BoundaryState.zero(), TimeAllocation([1.0])))
        assert traj.evaluate(traj.total_time, 0)[1] == pytest.approx(0.8, abs=1e-9)

    def test_kkt_stationarity(self, rng):
        # gradient of the cost projected onto the constraint null space vanishes
        for _ in range(5):
            m = int(rng.integers(1, 4))
            wps = random_waypoints(rng, m, box=2.0)
            boundary = random_boundary(rng, 0.5)
            alloc = random_allocation(rng, m)
            traj = solve_qp(QpProblem(wps, boundary, alloc))
            points = wps.positions()
            for axis in range(3):
                a_mat, _, q_mat = assemble_position_axis(
                    alloc.segment_durations, points[:, axis],
                    boundary_derivs_for_axis(boundary, axis),
                )
                coeffs = traj.position_coeffs[:, axis, :].reshape(-1)
                gradient = 2.0 * q_mat @ coeffs
                import scipy.linalg
                null = scipy.linalg.null_space(a_mat)
                assert np.linalg.norm(null.T @ gradient) < 1e-6

    def test_allocation_length_mismatch_rejected(self):
        wps = WaypointSequence(start=[0, 0, 0], goal=[1, 0, 0])
        with pytest.raises(ValueError):
            QpProblem(wps, BoundaryState.zero(), TimeAllocation([1.0, 1.0]))


class TestSnapCost:
    def test_cubic_has_zero_snap(self):
        pos = np.zeros((1, 3, 10))
        pos[0, 0, :4] = [0.0, 1.0, -0.5, 0.25]
        traj = PiecewisePolynomialTrajectory(np.array([1.0]), pos, np.zeros((1, 6)))
        assert snap_cost(traj, SnapCostWeights(1.0, 1.0, 0.0)) == 0.0

    def test_unit_snap_polynomial(self):
        # p_x(t) = t^4 / 24 has snap identically 1 on [0, 1]
        pos = np.zeros((1, 3, 10))
        pos[0, 0, 4] = 1.0 / 24.0
        traj = PiecewisePolynomialTrajectory(np.array([1.0]), pos, np.zeros((1, 6)))
        assert snap_cost(traj, SnapCostWeights(1.0, 0.0, 0.0)) == pytest.approx(1.0)

    def test_matches_quadrature_oracle(self, rng):
        from conftest import random_qp_trajectory
        for _ in range(5):
            traj = random_qp_trajectory(rng)
            exact = snap_cost(traj, SnapCostWeights(1.0, 1.0, 0.0))
            quad = quadrature_snap_cost(traj, 1.0, 1.0)
            assert exact == pytest.approx(quad, rel=1e-9)

    def test_doubling_durations_scales_by_two_pow_minus_seven(self):
        wps = WaypointSequence(start=[0, 0, 0], goal=[2, 1, 0], intermediate=([1, 0.5, 0],))
        w = SnapCostWeights(1.0, 0.0, 0.0)
        fast = solve_qp(QpProblem(wps, BoundaryState.zero(), TimeAllocation([1.0, 1.0])))
        slow = solve_qp(QpProblem(wps, BoundaryState.zero(), TimeAllocation([2.0, 2.0])))
        assert snap_cost(slow, w) / snap_cost(fast, w) == pytest.approx(2.0**-7, rel=1e-9)


class TestScaling:
    def test_scale_boundary_identity(self, rng):
        b = random_boundary(rng)
        scaled = scale_boundary(b, 1.0)
        np.testing.assert_allclose(scaled.velocity, b.velocity)
        np.testing.assert_allclose(scaled.snap, b.snap)

    def test_scale_boundary_zero_state(self):
        scaled = scale_boundary(BoundaryState.zero(), 7.3)
        np.testing.assert_allclose(scaled.velocity, 0.0)
        np.testing.assert_allclose(scaled.snap, 0.0)

    def test_scale_boundary_orders(self):
        b = BoundaryState(velocity=[2, 0, 0], snap=[16, 0, 0])
        scaled = scale_boundary(b, 2.0)
        np.testing.assert_allclose(scaled.velocity, [1, 0, 0])
        np.testing.assert_allclose(scaled.snap, [1, 0, 0])

    def test_scale_boundary_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scale_boundary(BoundaryState.zero(), 0.0)
        with pytest.raises(ValueError):
            scale_boundary(BoundaryState.zero(), -2.0)

    def test_scale_trajectory_identity_and_roundtrip(self, rng):
        from conftest import random_qp_trajectory
        traj = random_qp_trajectory(rng)
        same = scale_trajectory(traj, 1.0)
        np.testing.assert_allclose(same.position_coeffs, traj.position_coeffs)
        back = scale_trajectory(scale_trajectory(traj, 2.0), 0.5)
        np.testing.assert_allclose(back.position_coeffs, traj.position_coeffs, atol=1e-12)
        np.testing.assert_allclose(back.durations, traj.durations, atol=1e-12)

    def test_scale_trajectory_sampling(self, rng):
        from conftest import random_qp_trajectory
        traj = random_qp_trajectory(rng)
        scaled = scale_trajectory(traj, 3.0)
        ts = np.linspace(0, traj.total_time, 100)
        np.testing.assert_allclose(
            scaled.sample_position(3.0 * ts), traj.sample_position(ts), atol=1e-9
        )

    def test_shape_invariance_of_qp_solution(self, rng):
        # scaled durations + scaled boundary reproduce the same spatial curve
        for _ in range(4):
            m = int(rng.integers(1, 5))
            wps = random_waypoints(rng, m, with_yaw=True)
            boundary = random_boundary(rng, 0.6)
            alloc = random_allocation(rng, m)
            base = solve_qp(QpProblem(wps, boundary, alloc))
            for alpha in (0.5, 2.0, 3.0):
                scaled = solve_qp(QpProblem(
                    wps, scale_boundary(boundary, alpha), alloc.scaled(alpha)
                ))
                ts = np.linspace(0, base.total_time, 100)
                np.testing.assert_allclose(
                    scaled.sample_position(alpha * ts), base.sample_position(ts), atol=1e-6
                )

    def test_snap_cost_scaling_law(self, rng):
        w = SnapCostWeights(1.0, 0.0, 0.0)
        for _ in range(5):
            m = int(rng.integers(1, 5))
            wps = random_waypoints(rng, m)
            alloc = random_allocation(rng, m)
            base = snap_cost(solve_qp(QpProblem(wps, BoundaryState.zero(), alloc)), w)
            for alpha in (0.5, 2.0, 3.0):
                scaled = snap_cost(
                    solve_qp(QpProblem(wps, BoundaryState.zero(), alloc.scaled(alpha))), w
                )
                assert scaled == pytest.approx(alpha**-7 * base, rel=1e-6)


class TestOptimizeTimeAllocation:
    def test_higher_rho_never_slower(self, limits):
        wps = WaypointSequence(start=[0, 0, 0], goal=[1, 0, 0])
        slow = optimize_time_allocation(wps, BoundaryState.zero(), SnapCostWeights(rho=100.0), limits)
        fast = optimize_time_allocation(wps, BoundaryState.zero(), SnapCostWeights(rho=1000.0), limits)
        assert fast.total_time <= slow.total_time + 1e-9

    def test_equal_segments_optimum_is_front_loaded(self, limits):
        # With the start fully pinned at rest and the end derivatives free,
        # the optimum is not time-symmetric: the grid-search oracle puts the
        # minimum near x = [1.18, 0.26] (cost 813) while the best symmetric
        # allocation costs 1537. The optimizer must find the true optimum.
        wps = WaypointSequence(start=[0, 0, 0], goal=[2, 0, 0], intermediate=([1, 0, 0],))
        weights = SnapCostWeights(rho=500.0)
        alloc = optimize_time_allocation(wps, BoundaryState.zero(), weights, limits)
        x1, x2 = alloc.segment_durations
        assert x1 > x2
        cost = weights.rho * alloc.total_time + snap_cost(
            solve_qp(QpProblem(wps, BoundaryState.zero(), alloc, weights)), weights
        )
        assert cost <= 813.41 * 1.02
        best_symmetric = 1537.44
        assert cost < best_symmetric

    def test_matches_grid_search_oracle(self, limits):
        # exhaustive 2-D log grid bounds the achievable objective from below
        wps = WaypointSequence(start=[0, 0, 0], goal=[2, 0, 0], intermediate=([1, 0, 0],))
        weights = SnapCostWeights(rho=500.0)
        alloc = optimize_time_allocation(wps, BoundaryState.zero(), weights, limits)
        opt_cost = weights.rho * alloc.total_time + snap_cost(
            solve_qp(QpProblem(wps, BoundaryState.zero(), alloc, weights)), weights
        )
        from intercept.core import NumericalError

        grid = np.exp(np.linspace(np.log(0.05), np.log(5.0), 40))
        best = np.inf
        for x1 in grid:
            for x2 in grid:
                ta = TimeAllocation([x1, x2])
                try:
                    traj = solve_qp(QpProblem(wps, BoundaryState.zero(), ta, weights))
                except NumericalError:
                    continue
                if dynamic_limit_ratio(traj, limits) > 1.0:
                    continue
                best = min(best, weights.rho * ta.total_time + snap_cost(traj, weights))
        assert opt_cost <= best * 1.02

    def test_local_optimality_probe(self, rng, limits):
        for _ in range(3):
            m = int(rng.integers(1, 4))
            wps = random_waypoints(rng, m, box=2.0)
            weights = SnapCostWeights(rho=800.0)
            alloc = optimize_time_allocation(wps, BoundaryState.zero(), weights, limits)

            def objective(x):
                traj = solve_qp(QpProblem(wps, BoundaryState.zero(), TimeAllocation(x), weights))
                if dynamic_limit_ratio(traj, limits) > 1.0:
                    return np.inf
                return weights.rho * x.sum() + snap_cost(traj, weights)

            base = objective(alloc.segment_durations)
            for i in range(m):
                for f in (0.99, 1.01):
                    x = alloc.segment_durations.copy()
                    x[i] *= f
                    assert objective(x) >= base - 1e-9 * max(1.0, abs(base))

    def test_result_is_feasible(self, rng, limits):
        wps = random_waypoints(rng, 3)
        alloc = optimize_time_allocation(wps, BoundaryState.zero(), SnapCostWeights(rho=1e6), limits)
        traj = solve_qp(QpProblem(wps, BoundaryState.zero(), alloc))
        assert dynamic_limit_ratio(traj, limits) <= 1.0

    def test_infeasible_boundary_raises_with_best_iterate(self):
        # initial speed already violates the limit, so no allocation helps
        wps = WaypointSequence(start=[0, 0, 0], goal=[1, 0, 0])
        boundary = BoundaryState(velocity=[10.0, 0, 0])
        tight = DynamicLimits(max_speed=1.0, max_accel=2.0, max_yaw_rate=1.0)
        with pytest.raises(InfeasibleAllocationError) as excinfo:
            optimize_time_allocation(wps, boundary, SnapCostWeights(), tight, max_evaluations=60)
        assert isinstance(excinfo.value.best_allocation, TimeAllocation)
