"""Occupancy-grid A* with obstacle inflation, shortcutting and Chaikin smoothing."""

from __future__ import annotations

import heapq
import math

import numpy as np
from scipy import ndimage

from .scene import ObjectInstance, SceneSpec


class PlanningError(RuntimeError):
    """No collision-free route exists between the requested endpoints."""


def box_distance_xy(points: np.ndarray, obj: ObjectInstance) -> np.ndarray:
    """Planar distance from points ``(..., 2)`` to the object's footprint (0 inside)."""
    lo, hi = obj.aabb()
    d = np.maximum(np.maximum(lo[:2] - points, points - hi[:2]), 0.0)
    return np.sqrt((d * d).sum(axis=-1))


class OccupancyGrid:
    """Boolean free-space grid for a scene.

    A cell is free when its center keeps ``radius + resolution * sqrt(2) / 2``
    clearance from every object footprint and wall, so any point of a free
    cell keeps at least ``radius`` clearance.
    """

    def __init__(self, scene: SceneSpec, resolution: float = 0.1, radius: float = 0.2,
                 exclude: tuple[int, ...] = ()):
        self.scene = scene
        self.resolution = resolution
        self.radius = radius
        width, depth, _ = scene.extents
        self.nx = int(math.floor(width / resolution))
        self.ny = int(math.floor(depth / resolution))
        xs = (np.arange(self.nx) + 0.5) * resolution
        ys = (np.arange(self.ny) + 0.5) * resolution
        self.centers = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        self.obstacles = [o for o in scene.objects if o.id not in exclude]
        self.clearance = self.clearance_at(self.centers)
        self.free = self.clearance >= radius + resolution * math.sqrt(2) / 2
        self.labels, _ = ndimage.label(self.free, structure=np.ones((3, 3)))
        sizes = np.bincount(self.labels.ravel())
        sizes[0] = 0
        self.main_label = int(np.argmax(sizes)) if sizes.size > 1 else 0

    def clearance_at(self, points: np.ndarray) -> np.ndarray:
        """Distance to the nearest obstacle footprint or wall."""
        points = np.asarray(points, dtype=float)[..., :2]
        width, depth, _ = self.scene.extents
        walls = np.minimum.reduce([points[..., 0], width - points[..., 0],
                                   points[..., 1], depth - points[..., 1]])
        out = walls
        for obj in self.obstacles:
            out = np.minimum(out, box_distance_xy(points, obj))
        return out

    def cell_of(self, point) -> tuple[int, int]:
        i = int(np.clip(math.floor(point[0] / self.resolution), 0, self.nx - 1))
        j = int(np.clip(math.floor(point[1] / self.resolution), 0, self.ny - 1))
        return i, j

    def center_of(self, cell) -> np.ndarray:
        return self.centers[cell[0], cell[1]].copy()

    def nearest_free(self, point, reachable_only: bool = True) -> tuple[int, int]:
        mask = self.labels == self.main_label if reachable_only else self.free
        if not mask.any():
            raise PlanningError("scene has no free cell")
        d = np.linalg.norm(self.centers - np.asarray(point)[:2], axis=-1)
        d = np.where(mask, d, np.inf)
        flat = int(np.argmin(d))
        return divmod(flat, self.ny)

    def approach_cell(self, obj: ObjectInstance, standoff: float = 0.45) -> tuple[int, int]:
        """Nearest reachable free cell to a point in front of the object."""
        hx = obj.half_extents[0]
        front = np.asarray(obj.center[:2]) + obj.facing() * (hx + standoff)
        return self.nearest_free(front)

    def all_objects_reachable(self) -> bool:
        if self.main_label == 0:
            return False
        for obj in self.scene.objects:
            cell = self.approach_cell(obj)
            if np.linalg.norm(self.center_of(cell) - obj.center[:2]) > max(obj.half_extents[:2]) + 1.2:
                return False
        return True

    def random_free_point(self, rng: np.random.Generator) -> np.ndarray:
        cells = np.argwhere(self.labels == self.main_label)
        i, j = cells[int(rng.integers(len(cells)))]
        return self.center_of((i, j))

    def segment_clear(self, a, b, margin: float = 0.0, step: float = 0.02) -> bool:
        a, b = np.asarray(a)[:2], np.asarray(b)[:2]
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
        pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
        return bool(np.all(self.clearance_at(pts) >= self.radius + margin))


_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


def astar(grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int],
          clearance_weight: float = 1.0, comfort: float = 0.6) -> list[tuple[int, int]]:
    """8-connected A* on free cells, penalising cells closer than ``comfort`` to obstacles."""
    free = grid.free
    if not free[start] or not free[goal]:
        raise PlanningError(f"endpoint not in free space: start={start} goal={goal}")
    penalty = clearance_weight * np.clip(comfort - grid.clearance, 0.0, None) / comfort
    h = lambda c: math.hypot(c[0] - goal[0], c[1] - goal[1])  # noqa: E731
    best = {start: 0.0}
    parent: dict = {start: None}
    heap = [(h(start), 0.0, start)]
    while heap:
        _, g, cell = heapq.heappop(heap)
        if cell == goal:
            path = [cell]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        if g > best[cell]:
            continue
        ci, cj = cell
        for di, dj in _MOVES:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < grid.nx and 0 <= nj < grid.ny) or not free[ni, nj]:
                continue
            if di and dj and not (free[ci + di, cj] and free[ci, cj + dj]):
                continue
            step = math.sqrt(2.0) if di and dj else 1.0
            ng = g + step * (1.0 + penalty[ni, nj])
            if ng < best.get((ni, nj), math.inf):
                best[(ni, nj)] = ng
                parent[(ni, nj)] = cell
                heapq.heappush(heap, (ng + h((ni, nj)), ng, (ni, nj)))
    raise PlanningError(f"goal cell {goal} unreachable from {start}")


def shortcut(grid: OccupancyGrid, pts: np.ndarray, margin: float) -> np.ndarray:
    """Greedy line-of-sight pruning of a polyline."""
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not grid.segment_clear(pts[i], pts[j], margin):
            j -= 1
        out.append(pts[j])
        i = j
    return np.array(out)


def chaikin(pts: np.ndarray, iterations: int) -> np.ndarray:
    for _ in range(iterations):
        if len(pts) < 3:
            return pts
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        mid = np.empty((2 * len(q), pts.shape[1]))
        mid[0::2], mid[1::2] = q, r
        pts = np.vstack([pts[:1], mid[1:-1], pts[-1:]])
    return pts


def resample_polyline(pts: np.ndarray, n: int) -> np.ndarray:
    """``n`` points evenly spaced in arc length (endpoints kept)."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if n == 1:
        return pts[-1:].copy()
    if s[-1] <= 0:
        return np.repeat(pts[:1], n, axis=0)
    targets = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(targets, s, pts[:, k]) for k in range(pts.shape[1])], axis=1)


def polyline_clear(grid: OccupancyGrid, pts: np.ndarray) -> bool:
    return all(grid.segment_clear(a, b) for a, b in zip(pts[:-1], pts[1:]))


def plan_oracle_path(scene: SceneSpec, start, goal, n: int, height: float = 0.92,
                     grid: OccupancyGrid | None = None, smoothing: int = 3,
                     shortcut_margin: float = 0.1) -> np.ndarray:
    """Collision-free ``(n, 3)`` body-center path from ``start`` to ``goal``.

    Endpoints outside free space are projected to the nearest reachable free
    cell.  The route is found with A*, pruned by line of sight, smoothed with
    Chaikin corner cutting (reduced when a cut would enter an inflated
    obstacle) and resampled to ``n`` points of equal arc length.
    """
    if n < 1:
        raise ValueError("plan_oracle_path: N must be >= 1")
    grid = grid or OccupancyGrid(scene)
    start = np.asarray(start, dtype=float)[:2]
    goal = np.asarray(goal, dtype=float)[:2]
    s_cell, g_cell = grid.cell_of(start), grid.cell_of(goal)
    if not grid.free[s_cell] or grid.clearance_at(start) < grid.radius:
        s_cell = grid.nearest_free(start)
        start = grid.center_of(s_cell)
    if not grid.free[g_cell] or grid.clearance_at(goal) < grid.radius:
        g_cell = grid.nearest_free(goal)
        goal = grid.center_of(g_cell)
    if np.allclose(start, goal):
        xy = np.repeat(start[None], n, axis=0)
    else:
        cells = astar(grid, s_cell, g_cell)
        pts = np.array([grid.center_of(c) for c in cells])
        pts[0], pts[-1] = start, goal
        if not polyline_clear(grid, pts):
            # exact endpoints may sit between cells; fall back to cell centers
            pts = np.array([grid.center_of(c) for c in cells])
            pts = np.vstack([start[None], pts, goal[None]])
        pts = shortcut(grid, pts, shortcut_margin)
        for k in range(smoothing, -1, -1):
            smooth = chaikin(pts, k)
            if polyline_clear(grid, smooth):
                break
        xy = resample_polyline(smooth, n)
    return np.hstack([xy, np.full((n, 1), height)])
