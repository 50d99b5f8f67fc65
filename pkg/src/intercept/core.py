"""Shared domain types for piecewise-polynomial drone trajectories.

Positions are plain ``(3,)`` float arrays (meters). A trajectory is a
sequence of polynomial segments over segment-local time, degree 9 for each
position axis and degree 5 for yaw, which leaves enough freedom for smooth
joints plus waypoint interpolation. All types in this module are treated as
immutable values after construction and are safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

POSITION_COEFFS = 10  # degree 9 per position segment
YAW_COEFFS = 6        # degree 5 per yaw segment


class NumericalError(RuntimeError):
    """A linear solve failed or produced an untrustworthy result.

    Carries the condition number of the offending system when available.
    """

    def __init__(self, message: str, condition: float | None = None):
        if condition is not None:
            message = f"{message} (condition number ~ {condition:.3e})"
        super().__init__(message)
        self.condition = condition


def as_vec3(value, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 ``(3,)`` array."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True, eq=False)
class BoundaryState:
    """Initial higher-order state of the vehicle.

    Velocity through snap for position (m/s .. m/s^4), plus yaw rate and
    yaw acceleration. These are the derivatives pinned at the start of
    every optimized trajectory so that consecutive plans join smoothly.
    """

    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    jerk: np.ndarray = field(default_factory=lambda: np.zeros(3))
    snap: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0
    yaw_accel: float = 0.0

    def __post_init__(self):
        for name in ("velocity", "acceleration", "jerk", "snap"):
            object.__setattr__(self, name, as_vec3(getattr(self, name), name))
        if not (math.isfinite(self.yaw_rate) and math.isfinite(self.yaw_accel)):
            raise ValueError("yaw rate and yaw acceleration must be finite")

    @classmethod
    def zero(cls) -> "BoundaryState":
        return cls()

    def position_derivative(self, order: int) -> np.ndarray:
        """Return the order-th initial position derivative, order in 1..4."""
        if order == 1:
            return self.velocity
        if order == 2:
            return self.acceleration
        if order == 3:
            return self.jerk
        if order == 4:
            return self.snap
        raise ValueError(f"order must be in 1..4, got {order}")

    def yaw_derivative(self, order: int) -> float:
        if order == 1:
            return self.yaw_rate
        if order == 2:
            return self.yaw_accel
        raise ValueError(f"order must be 1 or 2, got {order}")


@dataclass(frozen=True, eq=False)
class TimeAllocation:
    """Per-segment durations, the outer variable of the time optimization."""

    segment_durations: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.segment_durations, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValueError("a time allocation needs at least one segment")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise ValueError(f"segment durations must be finite and positive, got {arr}")
        object.__setattr__(self, "segment_durations", arr)

    @property
    def total_time(self) -> float:
        return float(self.segment_durations.sum())

    def __len__(self) -> int:
        return int(self.segment_durations.size)

    def scaled(self, alpha: float) -> "TimeAllocation":
        if alpha <= 0.0:
            raise ValueError(f"scale factor must be positive, got {alpha}")
        return TimeAllocation(self.segment_durations * alpha)


@dataclass(frozen=True, eq=False)
class WaypointSequence:
    """Start, ordered intermediate waypoints, and goal, with yaw at the ends.

    Yaw is pinned only where given: the start yaw always, the goal yaw when
    not ``None``. Intermediate waypoints constrain position only.
    """

    start: np.ndarray
    goal: np.ndarray
    intermediate: tuple = ()
    start_yaw: float = 0.0
    goal_yaw: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "start", as_vec3(self.start, "start"))
        object.__setattr__(self, "goal", as_vec3(self.goal, "goal"))
        mids = tuple(as_vec3(p, "intermediate waypoint") for p in self.intermediate)
        object.__setattr__(self, "intermediate", mids)
        pts = self.positions()
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(gaps < 1e-12):
            raise ValueError("consecutive waypoints must not be identical")
        if not math.isfinite(self.start_yaw):
            raise ValueError("start yaw must be finite")
        if self.goal_yaw is not None and not math.isfinite(self.goal_yaw):
            raise ValueError("goal yaw must be finite")

    @property
    def segment_count(self) -> int:
        return len(self.intermediate) + 1

    def positions(self) -> np.ndarray:
        """All waypoint positions as an (m+1, 3) array."""
        return np.vstack([self.start, *self.intermediate, self.goal])

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions(), axis=0), axis=1)


@dataclass(frozen=True)
class SnapCostWeights:
    """Weights of the smoothness-plus-time objective.

    ``mu_r`` scales the integral of squared position snap, ``mu_psi`` the
    integral of squared yaw acceleration, ``rho`` the total-time term used
    by the time-allocation optimizer.
    """

    mu_r: float = 1.0
    mu_psi: float = 1.0
    rho: float = 1000.0

    def __post_init__(self):
        if self.mu_r < 0 or self.mu_psi < 0 or self.rho < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class DynamicLimits:
    """Per-sample dynamic limits standing in for controller trackability."""

    max_speed: float = 5.0
    max_accel: float = 12.0
    max_yaw_rate: float = 6.0

    def __post_init__(self):
        if self.max_speed <= 0 or self.max_accel <= 0 or self.max_yaw_rate <= 0:
            raise ValueError("dynamic limits must be strictly positive")


def _poly_derivative_value(coeffs: np.ndarray, tau: float, order: int) -> float:
    # coeffs lowest-order first; order-th derivative at local time tau
    n = coeffs.size
    if order >= n:
        return 0.0
    acc = 0.0
    for k in range(n - 1, order - 1, -1):
        scale = 1.0
        for j in range(k, k - order, -1):
            scale *= j
        acc = acc * tau + coeffs[k] * scale
    return acc


def _falling_factorials(n: int, order: int) -> np.ndarray:
    # k!/(k-order)! for k = 0..n-1, zero where k < order
    ks = np.arange(n, dtype=np.float64)
    out = np.ones(n)
    for j in range(order):
        out *= np.clip(ks - j, 0.0, None)
    return out


@dataclass(eq=False)
class PiecewisePolynomialTrajectory:
    """Time-parameterized position and yaw as polynomial segments.

    Coefficients are stored lowest-order first in the segment-local time
    variable ``tau in [0, duration]``, which keeps the evaluation and the
    quadratic forms well conditioned for long trajectories.

    Attributes
    ----------
    durations : ndarray, shape (m,)
        Strictly positive segment durations in seconds.
    position_coeffs : ndarray, shape (m, 3, 10)
        Per-segment coefficients for the x, y, z polynomials.
    yaw_coeffs : ndarray, shape (m, 6)
        Per-segment coefficients for the yaw polynomial.
    """

    durations: np.ndarray
    position_coeffs: np.ndarray
    yaw_coeffs: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.float64).reshape(-1)
        self.position_coeffs = np.asarray(self.position_coeffs, dtype=np.float64)
        self.yaw_coeffs = np.asarray(self.yaw_coeffs, dtype=np.float64)
        m = self.durations.size
        if m < 1 or np.any(self.durations <= 0) or not np.all(np.isfinite(self.durations)):
            raise ValueError("segment durations must be finite and positive")
        if self.position_coeffs.shape[:2] != (m, 3) or self.position_coeffs.ndim != 3:
            raise ValueError(f"position coefficients must be (m, 3, n), got {self.position_coeffs.shape}")
        if self.yaw_coeffs.shape[0] != m or self.yaw_coeffs.ndim != 2:
            raise ValueError(f"yaw coefficients must be (m, n), got {self.yaw_coeffs.shape}")
        if not np.all(np.isfinite(self.position_coeffs)) or not np.all(np.isfinite(self.yaw_coeffs)):
            raise ValueError("coefficients must be finite")
        self._cum = np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def segment_count(self) -> int:
        return int(self.durations.size)

    @property
    def total_time(self) -> float:
        return float(self._cum[-1])

    def segment_index(self, t: float) -> tuple[int, float]:
        """Map global time to (segment index, local time)."""
        if not (-1e-12 <= t <= self.total_time + 1e-12):
            raise ValueError(f"t={t} outside trajectory domain [0, {self.total_time}]")
        t = min(max(t, 0.0), self.total_time)
        i = int(np.searchsorted(self._cum[1:-1], t, side="right"))
        return i, t - self._cum[i]

    def evaluate(self, t: float, order: int = 0) -> tuple[np.ndarray, float]:
        """Evaluate the order-th time derivative of position and yaw at t.

        Parameters
        ----------
        t : float
            Global time in [0, total_time]; out of range raises ValueError.
        order : int
            Derivative order, 0..4. Yaw is only C2, so its value is
            meaningful up to order 2.

        Returns
        -------
        (position, yaw) : (ndarray shape (3,), float)
        """
        if not 0 <= order <= 4:
            raise ValueError(f"order must be in 0..4, got {order}")
        i, tau = self.segment_index(t)
        return self.evaluate_in_segment(i, tau, order)

    def evaluate_in_segment(self, segment: int, tau: float, order: int = 0) -> tuple[np.ndarray, float]:
        """Evaluate inside one segment at local time tau (one-sided at joints)."""
        pos = np.array([
            _poly_derivative_value(self.position_coeffs[segment, axis], tau, order)
            for axis in range(3)
        ])
        yaw = _poly_derivative_value(self.yaw_coeffs[segment], tau, order)
        return pos, yaw

    def sample_position(self, times: np.ndarray, order: int = 0) -> np.ndarray:
        """Vectorized position-derivative sampling at sorted or unsorted times."""
        times = np.asarray(times, dtype=np.float64)
        out = np.empty((times.size, 3))
        flat = times.reshape(-1)
        seg = np.searchsorted(self._cum[1:-1], np.clip(flat, 0.0, self.total_time), side="right")
        ff = _falling_factorials(POSITION_COEFFS, order)
        for i in np.unique(seg):
            mask = seg == i
            tau = np.clip(flat[mask], 0.0, self.total_time) - self._cum[i]
            # derivative coefficients of segment i, then Horner over the batch
            dcoef = (self.position_coeffs[i] * ff)[:, order:]  # (3, n-order)
            vals = np.zeros((mask.sum(), 3))
            for k in range(dcoef.shape[1] - 1, -1, -1):
                vals = vals * tau[:, None] + dcoef[:, k]
            out[mask] = vals
        return out

    def sample_yaw(self, times: np.ndarray, order: int = 0) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        seg = np.searchsorted(self._cum[1:-1], np.clip(times, 0.0, self.total_time), side="right")
        ff = _falling_factorials(YAW_COEFFS, order)
        out = np.empty(times.size)
        for i in np.unique(seg):
            mask = seg == i
            tau = np.clip(times[mask], 0.0, self.total_time) - self._cum[i]
            dcoef = (self.yaw_coeffs[i] * ff)[order:]
            vals = np.zeros(mask.sum())
            for k in range(dcoef.size - 1, -1, -1):
                vals = vals * tau + dcoef[k]
            out[mask] = vals
        return out

    def end_position(self) -> np.ndarray:
        pos, _ = self.evaluate_in_segment(self.segment_count - 1, self.durations[-1], 0)
        return pos

    def to_json_dict(self) -> dict:
        return {
            "segments": [
                {
                    "duration": float(self.durations[i]),
                    "coeffs_x": [float(c) for c in self.position_coeffs[i, 0]],
                    "coeffs_y": [float(c) for c in self.position_coeffs[i, 1]],
                    "coeffs_z": [float(c) for c in self.position_coeffs[i, 2]],
                    "coeffs_yaw": [float(c) for c in self.yaw_coeffs[i]],
                }
                for i in range(self.segment_count)
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "PiecewisePolynomialTrajectory":
        segs = data["segments"]
        if not segs:
            raise ValueError("trajectory JSON has no segments")
        n_pos = max(POSITION_COEFFS, max(len(s["coeffs_x"]) for s in segs))
        n_yaw = max(YAW_COEFFS, max(len(s["coeffs_yaw"]) for s in segs))
        durations = np.array([s["duration"] for s in segs])
        pos = np.zeros((len(segs), 3, n_pos))
        yaw = np.zeros((len(segs), n_yaw))
        for i, s in enumerate(segs):
            for axis, key in enumerate(("coeffs_x", "coeffs_y", "coeffs_z")):
                c = np.asarray(s[key], dtype=np.float64)
                pos[i, axis, : c.size] = c
            c = np.asarray(s["coeffs_yaw"], dtype=np.float64)
            yaw[i, : c.size] = c
        return cls(durations, pos, yaw)

    @classmethod
    def from_json(cls, text: str) -> "PiecewisePolynomialTrajectory":
        return cls.from_json_dict(json.loads(text))


def _segment_grid_samples(coeffs: np.ndarray, taus: np.ndarray, order: int) -> np.ndarray:
    """Horner evaluation of the order-th derivative over a per-segment grid.

    coeffs has shape (m, ..., n) and taus (m, s); returns (m, ..., s).
    """
    n = coeffs.shape[-1]
    dcoef = coeffs * _falling_factorials(n, order)
    tau_b = taus[(slice(None),) + (None,) * (coeffs.ndim - 2) + (slice(None),)]
    vals = np.zeros(coeffs.shape[:-1] + (taus.shape[1],))
    for k in range(n - 1, order - 1, -1):
        vals = vals * tau_b + dcoef[..., k, None]
    return vals


def _limit_ratio_grid(traj: PiecewisePolynomialTrajectory, limits: DynamicLimits,
                      samples_per_segment: int) -> np.ndarray:
    """Per-sample worst limit ratio, shape (segments, samples)."""
    u = np.linspace(0.0, 1.0, samples_per_segment)
    taus = traj.durations[:, None] * u[None, :]
    vel = _segment_grid_samples(traj.position_coeffs, taus, 1)
    acc = _segment_grid_samples(traj.position_coeffs, taus, 2)
    yaw_rate = _segment_grid_samples(traj.yaw_coeffs, taus, 1)
    speed = np.sqrt(np.einsum("mas,mas->ms", vel, vel))
    accel = np.sqrt(np.einsum("mas,mas->ms", acc, acc))
    ratio = speed / limits.max_speed
    np.maximum(ratio, accel / limits.max_accel, out=ratio)
    np.maximum(ratio, np.abs(yaw_rate) / limits.max_yaw_rate, out=ratio)
    return ratio


def dynamic_limit_ratio(
    traj: PiecewisePolynomialTrajectory,
    limits: DynamicLimits,
    samples_per_segment: int = 100,
) -> float:
    """Worst ratio of sampled speed / acceleration / yaw rate to its limit.

    A value <= 1 means every sample respects the limits. Samples are taken
    on a uniform grid of ``samples_per_segment`` points per segment,
    endpoints included.
    """
    return float(_limit_ratio_grid(traj, limits, samples_per_segment).max())


def boundary_state_at(traj: PiecewisePolynomialTrajectory, t: float) -> BoundaryState:
    """Read the instantaneous BoundaryState off a trajectory at time t."""
    derivs = [traj.evaluate(t, order) for order in range(1, 5)]
    return BoundaryState(
        velocity=derivs[0][0],
        acceleration=derivs[1][0],
        jerk=derivs[2][0],
        snap=derivs[3][0],
        yaw_rate=derivs[0][1],
        yaw_accel=derivs[1][1],
    )


@dataclass(frozen=True, eq=False)
class VehicleState:
    """Pose plus higher-order state, the planner's per-cycle input."""

    position: np.ndarray
    yaw: float = 0.0
    boundary: BoundaryState = field(default_factory=BoundaryState.zero)

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "position"))
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")
