"""Occupancy grid with obstacle padding and multi-resolution A* search.

The grid is a fine voxel lattice over an axis-aligned room. Coarser search
steps are validated against blocks of fine voxels through a summed-area
table, so a coarse move is allowed only when every fine voxel it covers is
free (conservative aggregation). The lattice size used to expand a node
grows with that node's distance from the search start: 0.1 m by default,
then 0.2 m, 0.5 m and 1.0 m past 10%, 20% and 40% of the room diagonal.

A single search serves many goal candidates at once. The heuristic points
at the centroid of the goals not yet reached, which is fast but not
admissible for any individual goal; with a single goal the heuristic is the
plain Euclidean distance and the result is optimal.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import as_vec3

_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]
_OFFSET_NORMS = [math.sqrt(dx * dx + dy * dy + dz * dz) for dx, dy, dz in _OFFSETS]


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box given by two corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_corner", as_vec3(self.min_corner, "min corner"))
        object.__setattr__(self, "max_corner", as_vec3(self.max_corner, "max corner"))
        if np.any(self.max_corner < self.min_corner):
            raise ValueError("box max corner must be >= min corner on every axis")

    def inflated(self, padding: float) -> "Box":
        return Box(self.min_corner - padding, self.max_corner + padding)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.all(point >= self.min_corner) and np.all(point <= self.max_corner))

    def to_json_dict(self) -> dict:
        return {"min": [float(v) for v in self.min_corner],
                "max": [float(v) for v in self.max_corner]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Box":
        return cls(np.asarray(data["min"]), np.asarray(data["max"]))


class OccupancyGrid:
    """Voxelized obstacle map with padding baked in.

    Use :func:`build_grid` to construct one from obstacle boxes. Immutable
    after construction; concurrent searches on the same grid are safe.
    """

    def __init__(self, bounds: Box, base_resolution: float, padding: float,
                 obstacles: tuple[Box, ...]):
        if base_resolution <= 0.0:
            raise ValueError(f"resolution must be positive, got {base_resolution}")
        if padding < 0.0:
            raise ValueError(f"padding must be non-negative, got {padding}")
        self.bounds = bounds
        self.base_resolution = float(base_resolution)
        self.padding = float(padding)
        self.obstacles = tuple(obstacles)

        extent = bounds.max_corner - bounds.min_corner
        shape = np.maximum(np.floor(extent / base_resolution + 1e-9).astype(int), 1)
        self.shape = (int(shape[0]), int(shape[1]), int(shape[2]))
        self.occupied = np.zeros(self.shape, dtype=bool)
        centers = [
            bounds.min_corner[axis] + (np.arange(self.shape[axis]) + 0.5) * base_resolution
            for axis in range(3)
        ]
        for box in self.obstacles:
            inflated = box.inflated(padding)
            masks = [
                (centers[axis] >= inflated.min_corner[axis]) & (centers[axis] <= inflated.max_corner[axis])
                for axis in range(3)
            ]
            if all(m.any() for m in masks):
                self.occupied[np.ix_(*masks)] = True
        # summed-area table for O(1) any-occupied block queries
        self._sat = np.zeros((self.shape[0] + 1, self.shape[1] + 1, self.shape[2] + 1), dtype=np.int64)
        self._sat[1:, 1:, 1:] = self.occupied.cumsum(0).cumsum(1).cumsum(2)

    @property
    def diagonal(self) -> float:
        return self.bounds.diagonal

    def is_inside(self, point) -> bool:
        return self.bounds.contains(np.asarray(point, dtype=np.float64))

    def cell_index(self, point) -> tuple[int, int, int]:
        point = np.asarray(point, dtype=np.float64)
        if not self.is_inside(point):
            raise ValueError(f"point {point} is outside the grid bounds")
        rel = (point - self.bounds.min_corner) / self.base_resolution
        idx = np.minimum(rel.astype(int), np.asarray(self.shape) - 1)
        return int(idx[0]), int(idx[1]), int(idx[2])

    def cell_center(self, cell: tuple[int, int, int]) -> np.ndarray:
        return self.bounds.min_corner + (np.asarray(cell, dtype=np.float64) + 0.5) * self.base_resolution

    def cell_occupied(self, cell: tuple[int, int, int]) -> bool:
        return bool(self.occupied[cell])

    def point_occupied(self, point) -> bool:
        return self.cell_occupied(self.cell_index(point))

    def occupied_in_range(self, lo: tuple[int, int, int], hi: tuple[int, int, int]) -> bool:
        """Any occupied voxel in the inclusive index range [lo, hi]?"""
        a0, b0, c0 = (max(lo[0], 0), max(lo[1], 0), max(lo[2], 0))
        a1 = min(hi[0], self.shape[0] - 1) + 1
        b1 = min(hi[1], self.shape[1] - 1) + 1
        c1 = min(hi[2], self.shape[2] - 1) + 1
        if a0 >= a1 or b0 >= b1 or c0 >= c1:
            return False
        s = self._sat
        count = (
            s[a1, b1, c1] - s[a0, b1, c1] - s[a1, b0, c1] - s[a1, b1, c0]
            + s[a0, b0, c1] + s[a0, b1, c0] + s[a1, b0, c0] - s[a0, b0, c0]
        )
        return bool(count > 0)

    def block_occupied(self, cell: tuple[int, int, int], half_cells: int) -> bool:
        """Conservative occupancy of the block of fine voxels around a cell."""
        if half_cells <= 0:
            return self.cell_occupied(cell)
        lo = (cell[0] - half_cells, cell[1] - half_cells, cell[2] - half_cells)
        hi = (cell[0] + half_cells, cell[1] + half_cells, cell[2] + half_cells)
        return self.occupied_in_range(lo, hi)

    def to_json_dict(self) -> dict:
        return {
            "bounds": self.bounds.to_json_dict(),
            "resolution": self.base_resolution,
            "padding": self.padding,
            "obstacles": [b.to_json_dict() for b in self.obstacles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "OccupancyGrid":
        return build_grid(
            [Box.from_json_dict(b) for b in data.get("obstacles", [])],
            Box.from_json_dict(data["bounds"]),
            base_resolution=data["resolution"],
            padding=data["padding"],
        )

    @classmethod
    def from_json(cls, text: str) -> "OccupancyGrid":
        return cls.from_json_dict(json.loads(text))


def build_grid(obstacles, bounds: Box, base_resolution: float = 0.1,
               padding: float = 0.5) -> OccupancyGrid:
    """Voxelize obstacle boxes into an occupancy grid.

    A voxel is occupied iff its center lies within any obstacle inflated by
    ``padding`` on all faces. Obstacles fully outside the bounds contribute
    nothing.
    """
    return OccupancyGrid(bounds, base_resolution, padding, tuple(obstacles))


def resolution_for_distance(distance: float, room_diagonal: float) -> float:
    """Lattice size as a function of distance between the drones.

    0.1 m by default, growing to 0.2 m, 0.5 m and 1.0 m once the distance
    exceeds 10%, 20% and 40% of the room diagonal.
    """
    if distance < 0.0 or room_diagonal <= 0.0:
        raise ValueError("distance must be >= 0 and diagonal > 0")
    if distance <= 0.10 * room_diagonal:
        return 0.1
    if distance <= 0.20 * room_diagonal:
        return 0.2
    if distance <= 0.40 * room_diagonal:
        return 0.5
    return 1.0


@dataclass(frozen=True, eq=False)
class GridPath:
    """Polyline of collision-free points from start to one goal."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"path points must be (M, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def length(self) -> float:
        if self.points.shape[0] < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def line_of_sight(grid: OccupancyGrid, a: np.ndarray, b: np.ndarray) -> bool:
    """True when the straight segment between two inside points is free."""
    span = float(np.linalg.norm(b - a))
    steps = max(2, int(math.ceil(span / (0.5 * grid.base_resolution))) + 1)
    pts = a[None, :] + np.linspace(0.0, 1.0, steps)[:, None] * (b - a)[None, :]
    cells = ((pts - grid.bounds.min_corner) / grid.base_resolution).astype(int)
    np.clip(cells, 0, np.asarray(grid.shape) - 1, out=cells)
    return not grid.occupied[cells[:, 0], cells[:, 1], cells[:, 2]].any()


def multi_resolution_astar(grid: OccupancyGrid, start, goals,
                           resolution_schedule=None,
                           max_expansions: int | None = None) -> dict[int, GridPath | None]:
    """One A* search that reaches a whole batch of goal candidates.

    Returns a map from goal index to its path, or ``None`` for goals that
    are unreachable (occupied, out of bounds, or walled off). Paths start at
    the exact start point and end at the exact goal point, with lattice
    block centers in between. Nodes are grid-aligned blocks of fine voxels,
    one level per lattice size of the resolution schedule; a block is free
    only if every fine voxel in it is free. 26-connected moves cost the
    Euclidean distance between block centers. A goal counts as reached when
    a node expands within its own block diagonal of it and the straight hop
    to the goal is collision free.

    With several pending goals the centroid heuristic is inflated by 1.1
    (weighted A*), trading at most 10% extra path cost for a much narrower
    search front; with a single pending goal the heuristic is the exact
    Euclidean distance and the returned path cost is optimal.

    ``max_expansions`` bounds the search when some goals cannot be reached;
    goals still pending at the cap are reported unreachable.
    """
    schedule = resolution_schedule or resolution_for_distance
    start = as_vec3(start, "start")
    if not grid.is_inside(start):
        raise ValueError(f"start {start} is outside the grid")
    start_cell = grid.cell_index(start)
    if grid.cell_occupied(start_cell):
        raise ValueError(f"start {start} is inside an occupied cell")
    if len(goals) == 0:
        raise ValueError("at least one goal is required")

    nx, ny, nz = grid.shape
    diag = grid.diagonal
    base = grid.base_resolution
    origin = grid.bounds.min_corner
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])
    max_x, max_y, max_z = (float(v) for v in grid.bounds.max_corner)
    sx, sy, sz = float(start[0]), float(start[1]), float(start[2])
    cells_total = nx * ny * nz
    sqrt3 = math.sqrt(3.0)
    occupied = grid.occupied
    sat = grid._sat

    step_levels: dict[int, int] = {}

    def level_of(step: int) -> int:
        lvl = step_levels.get(step)
        if lvl is None:
            lvl = len(step_levels)
            step_levels[step] = lvl
        return lvl

    results: dict[int, GridPath | None] = {}
    pending: dict[int, np.ndarray] = {}
    for idx, goal in enumerate(goals):
        goal = as_vec3(goal, "goal")
        if not grid.is_inside(goal) or grid.cell_occupied(grid.cell_index(goal)):
            results[idx] = None
        else:
            pending[idx] = goal

    arrival: dict[int, int] = {}
    goal_points = dict(pending)

    def heuristic_target() -> tuple[float, float, float]:
        if len(pending) == 1:
            g = next(iter(pending.values()))
        else:
            g = np.mean(list(pending.values()), axis=0)
        return float(g[0]), float(g[1]), float(g[2])

    start_id = level_of(1) * cells_total + (start_cell[0] * ny + start_cell[1]) * nz + start_cell[2]
    node_geometry: dict[int, tuple[int, int, int, int]] = {start_id: (1, *start_cell)}
    g_score: dict[int, float] = {start_id: 0.0}
    came: dict[int, int] = {}
    closed: set[int] = set()

    def pending_sphere():
        center = pending_xyz.mean(axis=0)
        radius = float(np.sqrt(((pending_xyz - center) ** 2).sum(axis=1).max()))
        return float(center[0]), float(center[1]), float(center[2]), radius

    if pending:
        pending_ids = list(pending)
        pending_xyz = np.array([pending[i] for i in pending_ids])
        px_c, py_c, pz_c, pr_c = pending_sphere()
        tx, ty, tz = heuristic_target()
        inflation = 1.0 if len(pending) == 1 else 1.1
        scx = ox + (start_cell[0] + 0.5) * base
        scy = oy + (start_cell[1] + 0.5) * base
        scz = oz + (start_cell[2] + 0.5) * base
        h0 = math.sqrt((scx - tx) ** 2 + (scy - ty) ** 2 + (scz - tz) ** 2)
        heap: list[tuple[float, float, int]] = [(h0, h0, start_id)]
    else:
        heap = []
    expansions = 0

    while heap and pending:
        _, _, current = heapq.heappop(heap)
        if current in closed:
            continue
        closed.add(current)
        expansions += 1
        if max_expansions is not None and expansions > max_expansions:
            break
        step_cur, ci0, cj0, ck0 = node_geometry[current]
        half = 0.5 * step_cur * base
        cx, cy, cz = ox + ci0 * base + half, oy + cj0 * base + half, oz + ck0 * base + half
        dist_start = math.sqrt((cx - sx) ** 2 + (cy - sy) ** 2 + (cz - sz) ** 2)
        nstep = max(1, int(round(schedule(dist_start, diag) / base)))
        reach = max(step_cur, nstep) * base * sqrt3

        near_cluster = math.sqrt((cx - px_c) ** 2 + (cy - py_c) ** 2 + (cz - pz_c) ** 2) - pr_c <= reach + 1e-9
        in_reach = ()
        if near_cluster:
            d_sq = (pending_xyz[:, 0] - cx) ** 2 + (pending_xyz[:, 1] - cy) ** 2 + (pending_xyz[:, 2] - cz) ** 2
            in_reach = np.nonzero(d_sq <= (reach + 1e-12) ** 2)[0]
        if len(in_reach):
            center_pt = np.array([cx, cy, cz])
            hit = [pending_ids[i] for i in in_reach
                   if line_of_sight(grid, center_pt, pending[pending_ids[i]])]
            if hit:
                for idx in hit:
                    arrival[idx] = current
                    del pending[idx]
                if not pending:
                    break
                pending_ids = list(pending)
                pending_xyz = np.array([pending[i] for i in pending_ids])
                px_c, py_c, pz_c, pr_c = pending_sphere()
                otx, oty, otz = tx, ty, tz
                tx, ty, tz = heuristic_target()
                inflation = 1.0 if len(pending) == 1 else 1.1
                moved = math.sqrt((tx - otx) ** 2 + (ty - oty) ** 2 + (tz - otz) ** 2)
                if moved > 0.5:
                    # stale heuristic values would degrade A* toward Dijkstra
                    fresh = []
                    seen: set[int] = set()
                    for _, _, nid in heap:
                        if nid in closed or nid in seen:
                            continue
                        seen.add(nid)
                        nstep_i, ni, nj, nk = node_geometry[nid]
                        nhx = ox + ni * base + 0.5 * nstep_i * base
                        nhy = oy + nj * base + 0.5 * nstep_i * base
                        nhz = oz + nk * base + 0.5 * nstep_i * base
                        nh = math.sqrt((nhx - tx) ** 2 + (nhy - ty) ** 2 + (nhz - tz) ** 2)
                        fresh.append((g_score[nid] + inflation * nh, nh, nid))
                    heap = fresh
                    heapq.heapify(heap)

        # neighbors: aligned nstep-blocks adjacent to the one containing
        # this node's center cell
        half_cells = step_cur // 2
        bi = (ci0 + half_cells) // nstep
        bj = (cj0 + half_cells) // nstep
        bk = (ck0 + half_cells) // nstep
        level = level_of(nstep)
        g_current = g_score[current]
        nhalf = 0.5 * nstep * base
        for dx, dy, dz in _OFFSETS:
            ci = (bi + dx) * nstep
            cj = (bj + dy) * nstep
            ck = (bk + dz) * nstep
            if ci < 0 or cj < 0 or ck < 0 or ci >= nx or cj >= ny or ck >= nz:
                continue
            px = ox + ci * base + nhalf
            py = oy + cj * base + nhalf
            pz = oz + ck * base + nhalf
            if px > max_x or py > max_y or pz > max_z:
                continue
            neighbor = level * cells_total + (ci * ny + cj) * nz + ck
            if neighbor in closed:
                continue
            if nstep == 1:
                if occupied[ci, cj, ck]:
                    continue
            else:
                a1 = ci + nstep if ci + nstep < nx else nx
                b1 = cj + nstep if cj + nstep < ny else ny
                c1 = ck + nstep if ck + nstep < nz else nz
                if (sat[a1, b1, c1] - sat[ci, b1, c1] - sat[a1, cj, c1] - sat[a1, b1, ck]
                        + sat[ci, cj, c1] + sat[ci, b1, ck] + sat[a1, cj, ck] - sat[ci, cj, ck]) > 0:
                    continue
            tentative = g_current + math.sqrt((px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2)
            if tentative < g_score.get(neighbor, math.inf) - 1e-12:
                g_score[neighbor] = tentative
                came[neighbor] = current
                node_geometry[neighbor] = (nstep, ci, cj, ck)
                h = math.sqrt((px - tx) ** 2 + (py - ty) ** 2 + (pz - tz) ** 2)
                heapq.heappush(heap, (tentative + inflation * h, h, neighbor))

    for idx, node in arrival.items():
        chain = [node]
        while chain[-1] != start_id:
            chain.append(came[chain[-1]])
        chain.reverse()
        points = [start]
        for nid in chain[1:]:
            step, ci, cj, ck = node_geometry[nid]
            points.append(origin + (np.array([ci, cj, ck], dtype=np.float64) + 0.5 * step) * base)
        points.append(goal_points[idx])
        deduped = [points[0]]
        for p in points[1:]:
            if np.linalg.norm(p - deduped[-1]) > 1e-9:
                deduped.append(p)
        results[idx] = GridPath(np.asarray(deduped))

    for idx in pending:
        results[idx] = None
    return results
