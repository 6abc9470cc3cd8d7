"""Deterministic synthetic environment.

Scenes are rows of rectangular rooms joined by doors, populated with small
categorized objects whose co-placement follows the related-category lexicon
(tables get chairs, beds get nightstands). The observation model emits depth
scans and object detections under a range/field-of-view/wall-occlusion
visibility rule, with seeded confidence noise and optional injected
false-positive goals that mimic the goal category only from a distance.

Everything is a pure function of (seed, action sequence): same inputs, same
bytes out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import gridops
from .config import GridConfig, MotionConfig, SceneParams, SensorConfig
from .exceptions import EpisodeFaultError, SceneGenerationError
from .gridops import FREE, OCCUPIED
from .mapping import DepthScan, OccupancyGrid, Pose, geodesic_distance
from .planner import Action, wrap_angle_deg
from .scene_graph import DEFAULT_RELATED_CATEGORIES, RelatedCategoryLexicon

SCHEMA_VERSION = 1
WALL_T = 0.1

ROOM_PALETTES: dict[str, list[str]] = {
    "bedroom": ["bed", "nightstand", "wardrobe", "dresser", "mirror", "reading chair", "floor lamp"],
    "living room": ["sofa", "table", "TV", "bookshelf", "chair", "plant", "fireplace", "mantel"],
    "kitchen": ["counter", "stove", "refrigerator", "freezer", "oven", "microwave", "table", "chair"],
    "office": ["desk", "office chair", "computer", "monitor", "bookcase", "books", "plant"],
    "dining room": ["dining table", "chair", "cabinet", "mirror", "plant", "piano", "bench"],
    "bathroom": ["bathroom sink", "mirror", "shower", "bathtub", "toilet", "towel rack"],
}
ROOM_ORDER = list(ROOM_PALETTES)

# categories reserved for goals so the goal is unique to its room
GOAL_POOL = ["piano", "bathtub", "fireplace", "washing machine", "TV", "bed", "refrigerator"]

# ground-truth functional pairs beyond simple adjacency
FUNCTIONAL_RELATIONS = {
    frozenset(("sofa", "TV")): "opposite to",
    frozenset(("monitor", "desk")): "above",
    frozenset(("computer", "desk")): "above",
}

_LEXICON = RelatedCategoryLexicon(DEFAULT_RELATED_CATEGORIES)


@dataclass
class Room:
    id: int
    room_type: str
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def wall_segments(self) -> list[tuple[float, float, float, float]]:
        return [
            (self.x0, self.y0, self.x1, self.y0),
            (self.x1, self.y0, self.x1, self.y1),
            (self.x0, self.y1, self.x1, self.y1),
            (self.x0, self.y0, self.x0, self.y1),
        ]


@dataclass
class SceneObject:
    id: int
    category: str
    x: float
    y: float
    half_extent: float
    room_id: int
    injected: bool = False

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class Door:
    between: tuple[int, int]
    x: float          # wall plane
    y0: float
    y1: float


@dataclass
class DetectionObservation:
    category: str
    confidence: float
    centroid: tuple[float, float, float]
    footprint: frozenset[tuple[int, int]]
    is_injected_false_positive: bool = False   # hidden evaluation flag
    gt_id: int = -1                            # hidden evaluation link


@dataclass
class Observation:
    step: int
    depth: DepthScan
    detections: list[DetectionObservation]
    covisibility: tuple[int, ...]      # gt ids detected together this frame
    collided: bool = False


@dataclass
class EpisodeState:
    pose: Pose
    goal_category: str
    step_count: int = 0
    max_steps: int = 500
    terminated: bool = False
    termination_cause: str = ""
    path_length: float = 0.0
    trace: list = field(default_factory=list)

    def record(self, action: Optional[Action], collided: bool) -> None:
        self.trace.append({
            "step": self.step_count,
            "action": action.value if action else None,
            "x": round(self.pose.x, 6),
            "y": round(self.pose.y, 6),
            "heading": round(self.pose.heading_deg, 6),
            "collided": collided,
        })


class Scene:
    def __init__(
        self,
        seed: int,
        rooms: list[Room],
        doors: list[Door],
        objects: list[SceneObject],
        relations: list[tuple[int, int, str]],
        goal_category: str,
        start: Pose,
        grid_config: Optional[GridConfig] = None,
    ):
        self.seed = seed
        self.rooms = rooms
        self.doors = doors
        self.objects = objects
        self.relations = relations
        self.goal_category = goal_category
        self.start = start
        self.grid_config = grid_config or GridConfig()
        self._gt_grid: Optional[OccupancyGrid] = None
        self._walls_grid: Optional[OccupancyGrid] = None
        self._regions: Optional[dict[int, frozenset]] = None

    # -- derived ground truth -------------------------------------------------

    @property
    def goal_ids(self) -> list[int]:
        return [o.id for o in self.objects
                if o.category == self.goal_category and not o.injected]

    def relation_map(self) -> dict[frozenset, str]:
        return {frozenset((a, b)): rel for a, b, rel in self.relations}

    def wall_rects(self) -> list[tuple[float, float, float, float]]:
        """Axis-aligned occupied strips: outer boundary plus internal walls
        with door gaps carved out."""
        x_min = min(r.x0 for r in self.rooms)
        x_max = max(r.x1 for r in self.rooms)
        y_min = min(r.y0 for r in self.rooms)
        y_max = max(r.y1 for r in self.rooms)
        t = WALL_T
        rects = [
            (x_min - t, y_min - t, x_max + t, y_min),
            (x_min - t, y_max, x_max + t, y_max + t),
            (x_min - t, y_min, x_min, y_max),
            (x_max, y_min, x_max + t, y_max),
        ]
        doors_by_x: dict[float, Door] = {d.x: d for d in self.doors}
        boundaries = sorted({r.x1 for r in self.rooms} - {x_max})
        for bx in boundaries:
            door = doors_by_x.get(bx)
            lo, hi = bx - t / 2, bx + t / 2
            if door is None:
                rects.append((lo, y_min, hi, y_max))
            else:
                rects.append((lo, y_min, hi, door.y0))
                rects.append((lo, door.y1, hi, y_max))
        return rects

    def _rasterize(self) -> None:
        cfg = self.grid_config
        gt = OccupancyGrid(cfg)
        gt.cells[:, :] = FREE
        walls = OccupancyGrid(cfg)
        walls.cells[:, :] = FREE
        for (x0, y0, x1, y1) in self.wall_rects():
            _fill_rect(gt.cells, cfg, x0, y0, x1, y1, OCCUPIED)
            _fill_rect(walls.cells, cfg, x0, y0, x1, y1, OCCUPIED)
        for obj in self.objects:
            _fill_rect(gt.cells, cfg,
                       obj.x - obj.half_extent, obj.y - obj.half_extent,
                       obj.x + obj.half_extent, obj.y + obj.half_extent, OCCUPIED)
        regions: dict[int, frozenset] = {}
        t = WALL_T
        x_min = min(r.x0 for r in self.rooms)
        x_max = max(r.x1 for r in self.rooms)
        for room in self.rooms:
            ix0 = room.x0 + (t if room.x0 == x_min else t / 2)
            ix1 = room.x1 - (t if room.x1 == x_max else t / 2)
            regions[room.id] = frozenset(
                _rect_cells(cfg, ix0, room.y0 + t, ix1, room.y1 - t)
            )
        self._gt_grid, self._walls_grid, self._regions = gt, walls, regions

    @property
    def gt_grid(self) -> OccupancyGrid:
        if self._gt_grid is None:
            self._rasterize()
        return self._gt_grid

    @property
    def walls_grid(self) -> OccupancyGrid:
        if self._walls_grid is None:
            self._rasterize()
        return self._walls_grid

    @property
    def room_regions(self) -> dict[int, frozenset]:
        if self._regions is None:
            self._rasterize()
        return self._regions

    def object_footprint(self, obj: SceneObject) -> frozenset[tuple[int, int]]:
        return frozenset(_rect_cells(
            self.grid_config,
            obj.x - obj.half_extent, obj.y - obj.half_extent,
            obj.x + obj.half_extent, obj.y + obj.half_extent,
        ))

    def room_of_point(self, x: float, y: float) -> Optional[int]:
        for room in self.rooms:
            if room.x0 <= x <= room.x1 and room.y0 <= y <= room.y1:
                return room.id
        return None

    # -- serialization --------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "goal_category": self.goal_category,
            "start": {"x": self.start.x, "y": self.start.y,
                      "heading_deg": self.start.heading_deg},
            "rooms": [asdict(r) for r in self.rooms],
            "doors": [{"between": list(d.between), "x": d.x, "y0": d.y0, "y1": d.y1}
                      for d in self.doors],
            "objects": [asdict(o) for o in self.objects],
            "relations": [[a, b, rel] for a, b, rel in self.relations],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, grid_config: Optional[GridConfig] = None) -> "Scene":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise SceneGenerationError(
                f"unsupported scene schema: {data.get('schema_version')}"
            )
        return cls(
            seed=data["seed"],
            rooms=[Room(**r) for r in data["rooms"]],
            doors=[Door(between=tuple(d["between"]), x=d["x"], y0=d["y0"], y1=d["y1"])
                   for d in data["doors"]],
            objects=[SceneObject(**o) for o in data["objects"]],
            relations=[(a, b, rel) for a, b, rel in data["relations"]],
            goal_category=data["goal_category"],
            start=Pose(**data["start"]),
            grid_config=grid_config,
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path | str, grid_config: Optional[GridConfig] = None) -> "Scene":
        return cls.from_json(Path(path).read_text(), grid_config)


def _fill_rect(cells: np.ndarray, cfg: GridConfig, x0: float, y0: float,
               x1: float, y1: float, value: int) -> None:
    res = cfg.resolution
    ix0 = max(0, int(math.floor((x0 - cfg.origin_x) / res)))
    iy0 = max(0, int(math.floor((y0 - cfg.origin_y) / res)))
    ix1 = min(cfg.width, int(math.ceil((x1 - cfg.origin_x) / res)))
    iy1 = min(cfg.height, int(math.ceil((y1 - cfg.origin_y) / res)))
    cells[ix0:ix1, iy0:iy1] = value


def _rect_cells(cfg: GridConfig, x0: float, y0: float, x1: float, y1: float):
    """Cells whose centers lie inside the rectangle."""
    res = cfg.resolution
    out = []
    ix0 = int(math.floor((x0 - cfg.origin_x) / res))
    iy0 = int(math.floor((y0 - cfg.origin_y) / res))
    ix1 = int(math.ceil((x1 - cfg.origin_x) / res))
    iy1 = int(math.ceil((y1 - cfg.origin_y) / res))
    for ix in range(max(0, ix0), min(cfg.width, ix1 + 1)):
        cx = cfg.origin_x + (ix + 0.5) * res
        if not (x0 <= cx <= x1):
            continue
        for iy in range(max(0, iy0), min(cfg.height, iy1 + 1)):
            cy = cfg.origin_y + (iy + 0.5) * res
            if y0 <= cy <= y1:
                out.append((ix, iy))
    return out


# ---------------------------------------------------------------------------
# Procedural generation
# ---------------------------------------------------------------------------


def generate_scene(seed: int, params: Optional[SceneParams] = None,
                   grid_config: Optional[GridConfig] = None) -> Scene:
    """Deterministic scene from a seed: a row of doored rooms, objects with
    lexicon-aware co-placement, a reachable goal in the far room, and
    optional injected false positives near the start."""
    params = params or SceneParams()
    params.validate()
    cfg = grid_config or GridConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2024]))

    n = params.n_rooms
    widths = rng.uniform(params.room_min_side, params.room_max_side, size=n)
    height = float(rng.uniform(params.room_min_side, params.room_max_side))
    total_w = float(widths.sum())
    if total_w + 2 > cfg.width * cfg.resolution or height + 2 > cfg.height * cfg.resolution:
        raise SceneGenerationError("rooms do not fit the grid")
    x_cursor = -total_w / 2
    y0, y1 = -height / 2, height / 2
    room_types = [ROOM_ORDER[int(rng.integers(0, len(ROOM_ORDER)))] for _ in range(n)]
    rooms: list[Room] = []
    for i in range(n):
        rooms.append(Room(i, room_types[i], x_cursor, y0, x_cursor + float(widths[i]), y1))
        x_cursor += float(widths[i])

    doors: list[Door] = []
    door_w = 1.0
    for i in range(n - 1):
        bx = rooms[i].x1
        cy = float(rng.uniform(y0 + 0.8 + door_w / 2, y1 - 0.8 - door_w / 2))
        doors.append(Door(between=(i, i + 1), x=bx, y0=cy - door_w / 2, y1=cy + door_w / 2))

    start = Pose(rooms[0].center[0], rooms[0].center[1], 0.0)

    objects: list[SceneObject] = []
    positions: list[tuple[float, float]] = []

    def try_place(room: Room, category: str, near: Optional[tuple[float, float]] = None,
                  injected: bool = False) -> Optional[SceneObject]:
        margin = 0.45
        lo_x, hi_x = room.x0 + WALL_T + margin, room.x1 - WALL_T - margin
        lo_y, hi_y = room.y0 + WALL_T + margin, room.y1 - WALL_T - margin
        if hi_x <= lo_x or hi_y <= lo_y:
            return None
        for _ in range(40):
            if near is not None:
                ang = float(rng.uniform(0, 2 * math.pi))
                rad = float(rng.uniform(0.55, 0.9))
                px = min(max(near[0] + rad * math.cos(ang), lo_x), hi_x)
                py = min(max(near[1] + rad * math.sin(ang), lo_y), hi_y)
            else:
                px = float(rng.uniform(lo_x, hi_x))
                py = float(rng.uniform(lo_y, hi_y))
            if math.hypot(px - start.x, py - start.y) < 1.0:
                continue
            min_gap = 0.45 if near is not None else 0.8
            if any(math.hypot(px - qx, py - qy) < min_gap for qx, qy in positions):
                continue
            he = float(rng.choice([0.075, 0.125, 0.175]))
            obj = SceneObject(len(objects), category, round(px, 3), round(py, 3),
                              he, room.id, injected)
            objects.append(obj)
            positions.append((px, py))
            return obj
        return None

    for room in rooms:
        palette = ROOM_PALETTES[room.room_type]
        count = int(rng.integers(params.min_objects_per_room,
                                 params.max_objects_per_room + 1))
        placed_in_room: list[SceneObject] = []
        idx = 0
        while len(placed_in_room) < count and idx < count + 6:
            category = palette[int(rng.integers(0, len(palette)))]
            idx += 1
            if any(o.category == category for o in placed_in_room):
                continue
            obj = try_place(room, category)
            if obj is None:
                continue
            placed_in_room.append(obj)
            partner = _lexicon_partner(category, palette)
            if partner and len(placed_in_room) < count and \
                    not any(o.category == partner for o in placed_in_room):
                mate = try_place(room, partner, near=obj.position)
                if mate is not None:
                    placed_in_room.append(mate)

    # designate the goal: a category unique to the farthest room
    goal_room = rooms[-1]
    goal_category = params.goal_category
    if goal_category is None:
        in_goal_room = [o for o in objects if o.room_id == goal_room.id]
        unique = [o for o in in_goal_room
                  if sum(1 for q in objects if q.category == o.category) == 1]
        if unique:
            goal_category = unique[0].category
        else:
            pool = [c for c in GOAL_POOL
                    if not any(o.category == c for o in objects)]
            category = pool[0] if pool else "piano"
            obj = try_place(goal_room, category)
            if obj is None:
                raise SceneGenerationError("could not place a goal object")
            goal_category = category

    # injected false positives mimic the goal from afar; keep them off the
    # goal category and close to the start so they are encountered first
    fp_candidates = [o for o in objects
                     if o.room_id == rooms[0].id and o.category != goal_category]
    fp_candidates.sort(key=lambda o: abs(math.hypot(o.x - start.x, o.y - start.y) - 4.0))
    for obj in fp_candidates[: params.n_false_positives]:
        obj.injected = True

    # ground-truth relations from co-placement geometry
    relations: list[tuple[int, int, str]] = []
    for i, a in enumerate(objects):
        for b in objects[i + 1:]:
            if a.room_id != b.room_id:
                continue
            d = math.hypot(a.x - b.x, a.y - b.y)
            key = frozenset((a.category, b.category))
            label = None
            if key in FUNCTIONAL_RELATIONS and d <= 4.0:
                label = FUNCTIONAL_RELATIONS[key]
            elif d <= 1.0:
                label = "next to"
            if label and rng.uniform() <= params.relation_density:
                relations.append((a.id, b.id, label))

    scene = Scene(seed, rooms, doors, objects, relations, goal_category, start,
                  grid_config=cfg)
    if not scene.goal_ids:
        raise SceneGenerationError(f"no goal instance of {goal_category!r}")
    reachable = any(
        math.isfinite(geodesic_distance(scene.gt_grid, start.position,
                                        next(o for o in objects if o.id == gid).position))
        for gid in scene.goal_ids
    )
    if not reachable:
        raise SceneGenerationError("goal unreachable from start")
    return scene


def _lexicon_partner(category: str, palette: list[str]) -> Optional[str]:
    for other in palette:
        if other != category and _LEXICON.related(category, other):
            return other
    return None


# ---------------------------------------------------------------------------
# Episode stepping
# ---------------------------------------------------------------------------


class Simulator:
    def __init__(
        self,
        scene: Scene,
        sensor: Optional[SensorConfig] = None,
        motion: Optional[MotionConfig] = None,
        max_steps: int = 500,
    ):
        self.scene = scene
        self.sensor = sensor or SensorConfig()
        self.motion = motion or MotionConfig()
        self.max_steps = max_steps
        self._noise = np.random.default_rng(np.random.SeedSequence([scene.seed, 77]))

    def reset(self) -> tuple[EpisodeState, Observation]:
        state = EpisodeState(
            pose=Pose(self.scene.start.x, self.scene.start.y, self.scene.start.heading_deg),
            goal_category=self.scene.goal_category,
            max_steps=self.max_steps,
        )
        return state, self._observe(state.pose, 0)

    def step(self, state: EpisodeState, action: Action) -> tuple[EpisodeState, Observation]:
        if state.terminated:
            raise EpisodeFaultError("action after termination")
        if state.step_count >= state.max_steps:
            raise EpisodeFaultError("step budget exhausted")
        collided = False
        pose = state.pose
        if action is Action.MOVE_FORWARD:
            h = pose.heading_rad()
            nx = pose.x + self.motion.step_m * math.cos(h)
            ny = pose.y + self.motion.step_m * math.sin(h)
            if self._blocked(pose.x, pose.y, nx, ny):
                collided = True
            else:
                pose.x, pose.y = nx, ny
                state.path_length += self.motion.step_m
        elif action is Action.TURN_LEFT:
            pose.heading_deg = (pose.heading_deg + self.motion.turn_deg) % 360.0
        elif action is Action.TURN_RIGHT:
            pose.heading_deg = (pose.heading_deg - self.motion.turn_deg) % 360.0
        elif action is Action.STOP:
            state.terminated = True
            state.termination_cause = "stopped"
        state.step_count += 1
        state.record(action, collided)
        if not state.terminated and state.step_count >= state.max_steps:
            state.terminated = True
            state.termination_cause = "budget"
        obs = self._observe(pose, state.step_count, collided)
        return state, obs

    # -- observation model ----------------------------------------------------

    def _blocked(self, x0: float, y0: float, x1: float, y1: float) -> bool:
        cfg = self.scene.grid_config
        gt = self.scene.gt_grid
        ix, iy = gt.world_to_cell(x1, y1)
        if not (0 <= ix < cfg.width and 0 <= iy < cfg.height):
            return True
        if gt.cells[ix, iy] == OCCUPIED:
            return True
        return gridops.segment_blocked(gt.cells, x0, y0, x1, y1,
                                       cfg.origin_x, cfg.origin_y, cfg.resolution)

    def _observe(self, pose: Pose, step: int, collided: bool = False) -> Observation:
        s = self.sensor
        cfg = self.scene.grid_config
        half_fov = math.radians(s.fov_deg) / 2
        angles = np.linspace(-half_fov, half_fov, s.n_rays)
        ranges = np.empty(s.n_rays)
        heading = pose.heading_rad()
        for i, rel in enumerate(angles):
            d = gridops.raycast_first_hit(
                self.scene.gt_grid.cells, pose.x, pose.y, heading + float(rel),
                s.max_range, cfg.origin_x, cfg.origin_y, cfg.resolution,
            )
            if d < s.min_range:
                ranges[i] = math.nan        # below the sensing floor: no information
            elif d <= s.max_range:
                ranges[i] = d
            else:
                ranges[i] = math.inf
        scan = DepthScan(angles=angles, ranges=ranges,
                         max_range=s.max_range, min_range=s.min_range)

        detections: list[DetectionObservation] = []
        for obj in self.scene.objects:
            d = math.hypot(obj.x - pose.x, obj.y - pose.y)
            if not (s.min_range <= d <= s.max_range):
                continue
            bearing = math.degrees(math.atan2(obj.y - pose.y, obj.x - pose.x))
            if abs(wrap_angle_deg(bearing - pose.heading_deg)) > s.fov_deg / 2:
                continue
            walls = self.scene.walls_grid
            if gridops.segment_blocked(walls.cells, pose.x, pose.y, obj.x, obj.y,
                                       cfg.origin_x, cfg.origin_y, cfg.resolution):
                continue
            category = obj.category
            mimics = False
            if obj.injected and d > s.fp_reveal_distance:
                category = self.scene.goal_category
                mimics = True
            noise = float(self._noise.uniform(-s.conf_noise, s.conf_noise))
            conf = s.conf_base - (s.conf_base - s.conf_at_max) * (d / s.max_range) + noise
            detections.append(DetectionObservation(
                category=category,
                confidence=float(min(max(conf, 0.0), 1.0)),
                centroid=(obj.x, obj.y, obj.half_extent),
                footprint=self.scene.object_footprint(obj),
                is_injected_false_positive=mimics,
                gt_id=obj.id,
            ))
        covis = tuple(sorted(det.gt_id for det in detections))
        return Observation(step=step, depth=scan, detections=detections,
                           covisibility=covis, collided=collided)

    # -- evaluation -----------------------------------------------------------

    def goal_positions(self) -> list[tuple[float, float]]:
        by_id = {o.id: o for o in self.scene.objects}
        return [by_id[gid].position for gid in self.scene.goal_ids]

    def distance_to_goal(self, position: tuple[float, float]) -> float:
        dists = [geodesic_distance(self.scene.gt_grid, position, g)
                 for g in self.goal_positions()]
        return min(dists) if dists else math.inf

    def optimal_path_length(self) -> float:
        return self.distance_to_goal(self.scene.start.position)


def check_success(scene: Scene, state: EpisodeState, success_distance: float = 1.0) -> tuple[bool, str]:
    """Success iff the agent stopped, within budget, with a true goal
    instance inside the success radius. Stopping near an injected mimic
    does not count: distances are measured to true instances only."""
    if not state.terminated:
        return False, "not terminated"
    if state.termination_cause != "stopped":
        return False, state.termination_cause
    if state.step_count > state.max_steps:
        return False, "budget"
    sim_positions = [o.position for o in scene.objects
                     if o.category == scene.goal_category and not o.injected]
    if not sim_positions:
        return False, "no goal instance"
    d = min(geodesic_distance(scene.gt_grid, state.pose.position, g)
            for g in sim_positions)
    if d <= success_distance:
        return True, "success"
    return False, f"stopped {d:.2f} m from goal"


# ---------------------------------------------------------------------------
# Ground-truth backends (stand-ins for real perception and real models)
# ---------------------------------------------------------------------------


class GroundTruthVlm:
    """Relation verifier that answers from scene ground truth, with an
    optional symmetric error rate applied per (frame, pair) for determinism."""

    def __init__(self, scene: Scene, error_rate: float = 0.0, seed: int = 0):
        self.scene = scene
        self.error_rate = error_rate
        self.seed = seed
        self._relmap = scene.relation_map()

    def _instance_at(self, category: str, position: tuple[float, float]) -> Optional[int]:
        best, best_d = None, 0.5
        for obj in self.scene.objects:
            if obj.category != category:
                continue
            d = math.hypot(obj.x - position[0], obj.y - position[1])
            if d <= best_d:
                best, best_d = obj.id, d
        return best

    def verify_relation(self, frame, category_a, category_b, position_a,
                        position_b, relation) -> bool:
        ida = self._instance_at(category_a, position_a)
        idb = self._instance_at(category_b, position_b)
        truth = False
        if ida is not None and idb is not None:
            truth = self._relmap.get(frozenset((ida, idb))) == relation
        if self.error_rate > 0.0:
            h = hash((self.seed, frame, ida, idb, relation)) & 0xFFFF
            if (h / 0xFFFF) < self.error_rate:
                truth = not truth
        return truth


class OraclePriorProvider:
    """Scripted completion provider whose priors come from scene ground
    truth. Prompts carry only category text, so instance disambiguation uses
    the request metadata side channel (positions of the nodes involved).

    Deterministic: responses are pure functions of (scene, request).
    """

    def __init__(self, scene: Scene):
        self.scene = scene
        self._lexicon = _LEXICON
        self._relmap = scene.relation_map()

    def _true_goal_positions(self, goal: str) -> list[tuple[float, float]]:
        return [o.position for o in self.scene.objects
                if o.category == goal and not o.injected]

    def _distance_to_goal(self, position, goal: str) -> float:
        goals = self._true_goal_positions(goal)
        if not goals:
            return 15.0
        return min(math.hypot(position[0] - g[0], position[1] - g[1]) for g in goals)

    def _instance_at(self, category: str, position) -> Optional[int]:
        best, best_d = None, 0.5
        for obj in self.scene.objects:
            if obj.category != category:
                continue
            d = math.hypot(obj.x - position[0], obj.y - position[1])
            if d <= best_d:
                best, best_d = obj.id, d
        return best

    def complete(self, request) -> str:
        from .llm import render_answer, render_distance, render_question, render_relations

        meta = request.metadata or {}
        kind = meta.get("kind", "")
        if kind == "edge_proposal":
            out = []
            for pair in meta["pairs"]:
                ida = self._instance_at(pair["a_category"], pair["a_position"])
                idb = self._instance_at(pair["b_category"], pair["b_position"])
                rel = None
                if ida is not None and idb is not None:
                    rel = self._relmap.get(frozenset((ida, idb)))
                if rel is None:
                    d = math.hypot(pair["a_position"][0] - pair["b_position"][0],
                                   pair["a_position"][1] - pair["b_position"][1])
                    if self._lexicon.related(pair["a_category"], pair["b_category"]) and d <= 1.2:
                        rel = "next to"
                    else:
                        rel = "near"
                out.append(rel)
            return render_relations(out)
        if kind in ("cot", "flat"):
            goal = meta["goal"]
            position = meta["central_position"]
            category = meta["central_category"]
            d = self._distance_to_goal(position, goal)
            if "ask question" in request.prompt:
                return render_question(f"Is there a {goal} near the {category}?")
            if "answer question" in request.prompt:
                return render_answer("Yes" if d <= 3.0 else "No")
            reason = f"Estimated separation between the {category} area and the {goal}."
            return render_distance(round(d, 2), reason)
        if kind == "summary":
            return "The selected direction is promising: " + request.prompt.splitlines()[-1]
        raise ValueError(f"oracle provider cannot answer request kind {kind!r}")
