"""Local policy: fast-marching arrival fields, waypoint extraction, and
discretization of waypoint following onto the four-action interface.

Planning treats occupied cells as blocked and unknown cells as traversable
at twice the cost, so paths cross frontiers when they must but prefer
mapped space.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import gridops
from .config import PlannerConfig
from .gridops import OCCUPIED
from .mapping import OccupancyGrid, Pose, _known_window

SNAP_RADIUS_M = 0.25


class Action(enum.Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"


@dataclass
class ArrivalField:
    """Eikonal arrival times seeded at a goal, over a working window."""

    grid: OccupancyGrid
    values: np.ndarray
    x0: int
    y0: int

    def at_cell(self, ix: int, iy: int) -> float:
        wx, wy = ix - self.x0, iy - self.y0
        if 0 <= wx < self.values.shape[0] and 0 <= wy < self.values.shape[1]:
            v = self.values[wx, wy]
            return float(v) if v < gridops.INF else math.inf
        return math.inf

    def at(self, xy: tuple[float, float]) -> float:
        return self.at_cell(*self.grid.world_to_cell(*xy))


def _inflate_occupied(window: np.ndarray, cells: int) -> np.ndarray:
    """Grow occupied regions by ``cells`` so planned paths keep clearance
    from mapped obstacles (straight 0.25 m steps must not clip corners)."""
    if cells <= 0:
        return window
    from scipy import ndimage

    occ = window == OCCUPIED
    grown = ndimage.binary_dilation(occ, iterations=cells)
    out = window.copy()
    out[grown] = OCCUPIED
    return out


def compute_arrival_field(
    grid: OccupancyGrid,
    goal: tuple[float, float],
    unknown_cost: float = 2.0,
    extra_points: Optional[list[tuple[float, float]]] = None,
    inflate_cells: int = 2,
) -> ArrivalField:
    """Solve the arrival-time field from a goal seed over the inflated grid.

    A goal inside an occupied or inflated cell snaps to the nearest clear
    cell (0.25 m plus the inflation margin)."""
    gx, gy = grid.world_to_cell(*goal)
    c = grid.config
    if not (0 <= gx < c.width and 0 <= gy < c.height):
        raise ValueError(f"goal outside grid: {goal}")
    anchors = [(gx, gy)]
    for p in extra_points or []:
        anchors.append(grid.world_to_cell(*p))
    x0, y0, x1, y1 = _known_window(grid, anchors)
    window = np.ascontiguousarray(grid.cells[x0:x1, y0:y1])
    window = _inflate_occupied(window, inflate_cells)
    sx, sy = gx - x0, gy - y0
    if window[sx, sy] == OCCUPIED:
        snap_cells = SNAP_RADIUS_M / c.resolution + inflate_cells + 1
        sx, sy = gridops.nearest_clear_cell(window, sx, sy, snap_cells)
        if sx < 0:
            return ArrivalField(grid, np.full((1, 1), gridops.INF), -10 ** 9, -10 ** 9)
    seeds = np.array([[sx, sy]], dtype=np.int64)
    values = gridops.fmm_field(window, seeds, c.resolution, unknown_cost)
    return ArrivalField(grid, values, x0, y0)


def extract_path(field: ArrivalField, start: tuple[float, float],
                 snap_radius_cells: int = 8) -> Optional[list[tuple[float, float]]]:
    """Descend the arrival field from start to the seed, cell by cell.

    Returns world waypoints spaced at most two cells apart, or None when the
    start has no finite arrival time. A start inside the inflated margin
    (typical right after a bump) snaps to the best nearby finite cell.
    """
    grid = field.grid
    ix, iy = grid.world_to_cell(*start)
    if not math.isfinite(field.at_cell(ix, iy)):
        best = None
        best_key = (math.inf, math.inf)
        for ox in range(-snap_radius_cells, snap_radius_cells + 1):
            for oy in range(-snap_radius_cells, snap_radius_cells + 1):
                d2 = ox * ox + oy * oy
                if d2 > snap_radius_cells * snap_radius_cells:
                    continue
                v = field.at_cell(ix + ox, iy + oy)
                if math.isfinite(v) and (d2, v) < best_key:
                    best_key = (d2, v)
                    best = (ix + ox, iy + oy)
        if best is None:
            return None
        ix, iy = best
    path = [(ix, iy)]
    current = field.at_cell(ix, iy)
    limit = field.values.size
    while current > 0.0 and len(path) < limit:
        best = None
        best_v = current
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                if ox == 0 and oy == 0:
                    continue
                v = field.at_cell(ix + ox, iy + oy)
                if v < best_v:
                    best_v = v
                    best = (ix + ox, iy + oy)
        if best is None:
            if current > grid.config.resolution * 2:
                return None    # stalled on a plateau far from the seed
            break
        ix, iy = best
        current = best_v
        path.append(best)
    return [grid.cell_center(cx, cy) for cx, cy in path]


def path_length(waypoints: Sequence[tuple[float, float]]) -> float:
    return sum(
        math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(waypoints, waypoints[1:])
    )


def plan_path(
    grid: OccupancyGrid,
    start: tuple[float, float],
    goal: tuple[float, float],
    unknown_cost: float = 2.0,
    inflate_cells: int = 2,
) -> Optional[list[tuple[float, float]]]:
    """Plan a waypoint path start -> goal; None when the goal is unreachable."""
    field = compute_arrival_field(grid, goal, unknown_cost, extra_points=[start],
                                  inflate_cells=inflate_cells)
    waypoints = extract_path(field, start)   # descent already runs start -> goal
    if waypoints is None:
        return None
    return waypoints


def wrap_angle_deg(angle: float) -> float:
    """Wrap to (-180, 180]."""
    a = angle % 360.0
    if a > 180.0:
        a -= 360.0
    return a


def bearing_deg(from_xy: tuple[float, float], to_xy: tuple[float, float]) -> float:
    return math.degrees(math.atan2(to_xy[1] - from_xy[1], to_xy[0] - from_xy[0]))


def next_action(
    pose: Pose,
    waypoints: Sequence[tuple[float, float]],
    config: Optional[PlannerConfig] = None,
    stop_radius: Optional[float] = None,
) -> Action:
    """Follow the waypoint list with the discrete action set.

    Turns are emitted while the bearing to the active waypoint deviates from
    the heading by more than the deadband (ties turn left); otherwise move
    forward. With ``stop_radius`` set, reaching the final waypoint emits stop.
    """
    if not waypoints:
        raise ValueError("empty waypoint list")
    cfg = config or PlannerConfig()
    target = _active_waypoint(pose, waypoints, cfg.waypoint_radius)
    if stop_radius is not None:
        fx, fy = waypoints[-1]
        if math.hypot(fx - pose.x, fy - pose.y) <= stop_radius:
            return Action.STOP
    delta = wrap_angle_deg(bearing_deg(pose.position, target) - pose.heading_deg)
    if abs(delta) > cfg.heading_deadband_deg:
        # wrap maps the 180-degree tie to +180, which turns left
        return Action.TURN_LEFT if delta > 0 else Action.TURN_RIGHT
    return Action.MOVE_FORWARD


def _active_waypoint(
    pose: Pose, waypoints: Sequence[tuple[float, float]], radius: float
) -> tuple[float, float]:
    """Skip waypoints already within the arrival radius (pure pursuit)."""
    for wp in waypoints:
        if math.hypot(wp[0] - pose.x, wp[1] - pose.y) > radius:
            return wp
    return waypoints[-1]


def prune_reached(
    pose: Pose, waypoints: list[tuple[float, float]], radius: float
) -> list[tuple[float, float]]:
    """Drop leading waypoints within the arrival radius, keeping the last."""
    idx = 0
    for i, wp in enumerate(waypoints):
        if math.hypot(wp[0] - pose.x, wp[1] - pose.y) <= radius:
            idx = i + 1
        else:
            break
    if idx >= len(waypoints):
        return [waypoints[-1]]
    return waypoints[idx:]


class ApproachObserver:
    """Drives the multi-view inspection of a detected goal candidate.

    Travels to an observation holding distance, orients toward the candidate,
    then requests one observation per step while rotating between requests to
    vary the viewpoint. ``decide`` returns (mode, action) where mode is one
    of travel | observe | unreachable; in observe mode the caller should feed
    the current frame to the credibility accumulator before acting.
    """

    def __init__(self, candidate_position: tuple[float, float],
                 config: Optional[PlannerConfig] = None):
        self.candidate = candidate_position
        self.config = config or PlannerConfig()
        self._waypoints: Optional[list[tuple[float, float]]] = None
        self._oriented = False

    def _distance(self, pose: Pose) -> float:
        return math.hypot(self.candidate[0] - pose.x, self.candidate[1] - pose.y)

    def invalidate_plan(self) -> None:
        self._waypoints = None

    def decide(self, grid: OccupancyGrid, pose: Pose) -> tuple[str, Optional[Action]]:
        cfg = self.config
        if self._distance(pose) > cfg.hold_distance:
            if not self._waypoints or len(self._waypoints) == 0:
                self._waypoints = plan_path(grid, pose.position, self.candidate,
                                            cfg.unknown_cost, cfg.inflate_cells)
                if self._waypoints is None:
                    return "unreachable", None
            self._waypoints = prune_reached(pose, self._waypoints, cfg.waypoint_radius)
            return "travel", next_action(pose, self._waypoints, cfg)
        if not self._oriented:
            delta = wrap_angle_deg(bearing_deg(pose.position, self.candidate) - pose.heading_deg)
            if abs(delta) > cfg.heading_deadband_deg:
                return "travel", Action.TURN_LEFT if delta > 0 else Action.TURN_RIGHT
            self._oriented = True
        # rotate between consecutive observations to vary the viewpoint
        return "observe", Action.TURN_LEFT
