"""Waypoint extraction along a grid path via knot parameterization.

Progress along the path is measured by the average of an arc-length
parameter and a discrete-curvature parameter (inverse circumradius of
consecutive point triples times the local arc window). Waypoints are the
path points nearest to uniform levels of that combined parameter, so turns
receive proportionally more polynomial segments than straight runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import WaypointSequence, as_vec3, wrap_angle
from .gridplan import GridPath


class DegeneratePathError(ValueError):
    """The path repeats a point and cannot be parameterized."""


@dataclass(frozen=True)
class WaypointSelectionConfig:
    """Tunables of the waypoint count formula and its clamp."""

    k_d_min: float = 2.0
    k_c_min: float = 1.5
    min_waypoints: int = 2
    max_waypoints: int = 14

    def __post_init__(self):
        if self.k_d_min <= 0 or self.k_c_min <= 0:
            raise ValueError("k_d_min and k_c_min must be positive")
        if not 2 <= self.min_waypoints <= self.max_waypoints:
            raise ValueError("waypoint bounds must satisfy 2 <= min <= max")


def inverse_circumradius(p0, p1, p2) -> float:
    """1/R of the circle through three points; 0 for collinear triples."""
    p0, p1, p2 = as_vec3(p0), as_vec3(p1), as_vec3(p2)
    a = np.linalg.norm(p1 - p0)
    b = np.linalg.norm(p2 - p1)
    c = np.linalg.norm(p2 - p0)
    if a < 1e-12 or b < 1e-12:
        raise DegeneratePathError("repeated point in curvature triple")
    area2 = np.linalg.norm(np.cross(p1 - p0, p2 - p0))  # 2 * triangle area
    if c < 1e-12:
        return 0.0
    return float(2.0 * area2 / (a * b * c))


def _parameterization(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = points.shape[0]
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if np.any(gaps < 1e-12):
        raise DegeneratePathError("consecutive path points coincide")
    k_d = np.concatenate([[0.0], np.cumsum(gaps)])
    k_c = np.zeros(m)
    for i in range(1, m - 1):
        kappa = inverse_circumradius(points[i - 1], points[i], points[i + 1])
        window = 0.5 * (k_d[i + 1] - k_d[i - 1])
        k_c[i] = k_c[i - 1] + kappa * window
    if m >= 2:
        k_c[m - 1] = k_c[m - 2]
    return k_d, k_c, 0.5 * (k_d + k_c)


def knot_parameterization(path: GridPath) -> np.ndarray:
    """Combined distance-and-curvature progress value per path point.

    Non-decreasing, starting at 0. Collinear stretches contribute only
    arc length; corners add their inverse circumradius weighted by the
    local window, a Riemann sum of curvature over arc length.
    """
    points = np.asarray(path.points, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("knot parameterization needs at least two path points")
    return _parameterization(points)[2]


def waypoint_count(k_d_total: float, k_c_total: float, config: WaypointSelectionConfig) -> int:
    """Waypoint count from total distance and curvature, clamped to bounds."""
    raw = max(k_d_total / config.k_d_min, k_c_total / config.k_c_min)
    return int(min(max(math.ceil(raw), config.min_waypoints), config.max_waypoints))


def select_waypoints(path: GridPath, config: WaypointSelectionConfig, goal,
                     start_yaw: float = 0.0) -> WaypointSequence:
    """Pick waypoints along the path at uniform knot-parameter levels.

    The first waypoint is the exact path start and the last is the exact
    goal; interior waypoints snap to path points so they stay on the
    collision-free lattice. The goal yaw is aligned with the final path
    tangent (wrapped near ``start_yaw``); other waypoints leave yaw free.
    """
    goal = as_vec3(goal, "goal")
    points = np.asarray(path.points, dtype=np.float64)
    m = points.shape[0]
    if m < 2:
        raise ValueError("waypoint selection needs at least two path points")
    k_d, k_c, k = _parameterization(points)

    count = waypoint_count(k_d[-1], k_c[-1], config)
    levels = np.linspace(0.0, k[-1], count)
    indices = [0]
    for level in levels[1:-1]:
        j = int(np.argmin(np.abs(k - level)))
        if indices[-1] < j < m - 1:
            indices.append(j)
    selected = [points[0]]
    selected.extend(points[j] for j in indices[1:])

    # exact goal replaces the last lattice point
    if np.linalg.norm(selected[-1] - goal) < 1e-9 and len(selected) > 1:
        selected.pop()
    tangent = goal - selected[-1]
    if np.linalg.norm(tangent[:2]) > 1e-9:
        goal_yaw = start_yaw + wrap_angle(math.atan2(tangent[1], tangent[0]) - start_yaw)
    else:
        goal_yaw = start_yaw
    return WaypointSequence(
        start=selected[0],
        goal=goal,
        intermediate=tuple(selected[1:]),
        start_yaw=start_yaw,
        goal_yaw=goal_yaw,
    )
