"""BEV occupancy mapping: depth-scan integration, frontier extraction, and
grid geodesics.

The grid holds three cell states (unknown, free, occupied). Occupied is
sticky for the lifetime of an episode: once a cell is marked occupied it
never reverts, which keeps the map monotone under noisy scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from . import gridops
from .config import GridConfig
from .exceptions import EpisodeFaultError
from .gridops import FREE, OCCUPIED, UNKNOWN

SNAP_RADIUS_M = 0.25


@dataclass
class Pose:
    x: float
    y: float
    heading_deg: float = 0.0    # multiples of the turn quantum, in [0, 360)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def heading_rad(self) -> float:
        return math.radians(self.heading_deg)


@dataclass
class DepthScan:
    """One sweep of depth rays. ``angles`` are radians relative to the pose
    heading; ``ranges`` hold measured depth, ``inf`` for no return within
    ``max_range`` and ``nan`` for returns below ``min_range`` (not sensed)."""

    angles: np.ndarray
    ranges: np.ndarray
    max_range: float = 10.0
    min_range: float = 1.5

    def __len__(self) -> int:
        return len(self.angles)


@dataclass
class Frontier:
    id: int
    cells: np.ndarray          # (k, 2) int cell indices
    centroid: tuple[float, float]

    @property
    def size(self) -> int:
        return int(self.cells.shape[0])


class OccupancyGrid:
    def __init__(self, config: Optional[GridConfig] = None):
        self.config = config or GridConfig()
        self.cells = np.full(
            (self.config.width, self.config.height), UNKNOWN, dtype=np.uint8
        )

    # -- coordinate helpers -------------------------------------------------

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        c = self.config
        return (
            int(math.floor((x - c.origin_x) / c.resolution)),
            int(math.floor((y - c.origin_y) / c.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        c = self.config
        return (
            c.origin_x + (ix + 0.5) * c.resolution,
            c.origin_y + (iy + 0.5) * c.resolution,
        )

    def in_bounds_world(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        return 0 <= ix < self.config.width and 0 <= iy < self.config.height

    # -- state --------------------------------------------------------------

    @property
    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.cells == UNKNOWN))

    def state_at(self, x: float, y: float) -> int:
        ix, iy = self.world_to_cell(x, y)
        return int(self.cells[ix, iy])

    def mark_free_disk(self, x: float, y: float, radius: float) -> None:
        """Mark unknown cells within ``radius`` of a point free (body evidence
        of traversal, e.g. the agent standing there). Never touches occupied."""
        c = self.config
        r_cells = max(0, int(math.ceil(radius / c.resolution)))
        cx, cy = self.world_to_cell(x, y)
        for ox in range(-r_cells, r_cells + 1):
            for oy in range(-r_cells, r_cells + 1):
                nx, ny = cx + ox, cy + oy
                if not (0 <= nx < c.width and 0 <= ny < c.height):
                    continue
                px, py = self.cell_center(nx, ny)
                if (px - x) ** 2 + (py - y) ** 2 <= radius * radius:
                    if self.cells[nx, ny] == UNKNOWN:
                        self.cells[nx, ny] = FREE

    def mark_occupied_cell(self, ix: int, iy: int) -> None:
        if 0 <= ix < self.config.width and 0 <= iy < self.config.height:
            self.cells[ix, iy] = OCCUPIED

    def snapshot(self) -> "OccupancyGrid":
        clone = OccupancyGrid(self.config)
        clone.cells = self.cells.copy()
        return clone

    # -- exports ------------------------------------------------------------

    def to_pgm(self) -> bytes:
        """Binary portable graymap: unknown=128, free=255, occupied=0."""
        lut = np.array([128, 255, 0], dtype=np.uint8)
        img = lut[self.cells]
        rows = img.T[::-1]     # image rows top-down = decreasing y
        header = f"P5\n{self.config.width} {self.config.height}\n255\n".encode()
        return header + rows.tobytes()

    def dump_text(self) -> str:
        """Bit-exact cell dump, one row per line (top row = max y)."""
        c = self.config
        chars = np.array(["U", "F", "O"])
        lines = ["".join(row) for row in chars[self.cells.T[::-1]]]
        header = f"grid {c.width} {c.height} res={c.resolution} origin=({c.origin_x},{c.origin_y})"
        return "\n".join([header] + lines)


def integrate_depth(grid: OccupancyGrid, pose: Pose, scan: DepthScan) -> int:
    """Fuse one depth scan into the grid; returns changed-cell count."""
    if not grid.in_bounds_world(pose.x, pose.y):
        raise EpisodeFaultError(f"pose outside grid: ({pose.x}, {pose.y})")
    c = grid.config
    changed = 0
    heading = pose.heading_rad()
    for angle_rel, rng in zip(scan.angles, scan.ranges):
        if math.isnan(rng):
            continue
        hit = float(rng) if math.isfinite(rng) and rng <= scan.max_range else gridops.INF
        changed += gridops.integrate_ray(
            grid.cells,
            pose.x,
            pose.y,
            heading + float(angle_rel),
            hit,
            scan.max_range,
            scan.min_range,
            c.origin_x,
            c.origin_y,
            c.resolution,
        )
    return changed


def frontier_mask(cells: np.ndarray) -> np.ndarray:
    """Boolean mask of free cells 4-adjacent to at least one unknown cell."""
    free = cells == FREE
    unknown = cells == UNKNOWN
    near_unknown = np.zeros_like(free)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    return free & near_unknown


def extract_frontiers(grid: OccupancyGrid, min_cells: Optional[int] = None) -> list[Frontier]:
    """Cluster frontier cells by 8-connectivity; small clusters are noise."""
    if min_cells is None:
        min_cells = grid.config.min_frontier_cells
    mask = frontier_mask(grid.cells)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    frontiers: list[Frontier] = []
    if n == 0:
        return frontiers
    res = grid.config.resolution
    ox, oy = grid.config.origin_x, grid.config.origin_y
    for lab in range(1, n + 1):
        idx = np.argwhere(labels == lab)
        if idx.shape[0] < min_cells:
            continue
        centers_x = ox + (idx[:, 0] + 0.5) * res
        centers_y = oy + (idx[:, 1] + 0.5) * res
        frontiers.append(
            Frontier(
                id=len(frontiers),
                cells=idx,
                centroid=(float(centers_x.mean()), float(centers_y.mean())),
            )
        )
    return frontiers


def _known_window(grid: OccupancyGrid, points: list[tuple[int, int]], margin: int = 40):
    """Sub-grid bounds covering all known cells plus the query points."""
    known = np.argwhere(grid.cells != UNKNOWN)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    if known.size:
        xs += [int(known[:, 0].min()), int(known[:, 0].max())]
        ys += [int(known[:, 1].min()), int(known[:, 1].max())]
    x0 = max(0, min(xs) - margin)
    y0 = max(0, min(ys) - margin)
    x1 = min(grid.config.width, max(xs) + margin + 1)
    y1 = min(grid.config.height, max(ys) + margin + 1)
    return x0, y0, x1, y1


class DistanceField:
    """Dijkstra distance field from a seed, restricted to a working window.

    Unknown cells are traversable at unit cost: this is the metric geodesic
    used for path-length accounting, not the planner's traversal cost.
    """

    def __init__(self, grid: OccupancyGrid, seed_xy: tuple[float, float],
                 snap_radius: float = SNAP_RADIUS_M,
                 extra_points: Optional[list[tuple[float, float]]] = None):
        self.grid = grid
        six, siy = grid.world_to_cell(*seed_xy)
        if not (0 <= six < grid.config.width and 0 <= siy < grid.config.height):
            raise ValueError(f"seed outside grid: {seed_xy}")
        snap_cells = snap_radius / grid.config.resolution
        if grid.cells[six, siy] == OCCUPIED:
            six, siy = gridops.nearest_free_cell(grid.cells, six, siy, snap_cells)
        self._unreachable_seed = six < 0
        if self._unreachable_seed:
            return
        anchor_cells = [(six, siy)]
        for p in extra_points or []:
            anchor_cells.append(grid.world_to_cell(*p))
        self.x0, self.y0, x1, y1 = _known_window(grid, anchor_cells)
        window = np.ascontiguousarray(grid.cells[self.x0:x1, self.y0:y1])
        self.window_shape = window.shape
        self.field = gridops.dijkstra_field(
            window, six - self.x0, siy - self.y0, grid.config.resolution, 1.0, True
        )

    def at(self, xy: tuple[float, float], snap_radius: float = SNAP_RADIUS_M) -> float:
        if self._unreachable_seed:
            return math.inf
        ix, iy = self.grid.world_to_cell(*xy)
        if self.grid.cells[ix, iy] == OCCUPIED:
            snap_cells = snap_radius / self.grid.config.resolution
            ix, iy = gridops.nearest_free_cell(self.grid.cells, ix, iy, snap_cells)
            if ix < 0:
                return math.inf
        wx, wy = ix - self.x0, iy - self.y0
        if not (0 <= wx < self.window_shape[0] and 0 <= wy < self.window_shape[1]):
            return math.inf
        d = self.field[wx, wy]
        return float(d) if d < gridops.INF else math.inf


def geodesic_distance(grid: OccupancyGrid, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Shortest obstacle-avoiding path length in meters; ``inf`` if no path.

    Unknown space counts as traversable. Endpoints inside occupied cells snap
    to the nearest free cell within 0.25 m.
    """
    for p in (a, b):
        if not grid.in_bounds_world(*p):
            raise ValueError(f"endpoint outside grid: {p}")
    return DistanceField(grid, a, extra_points=[b]).at(b)
