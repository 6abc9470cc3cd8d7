"""Dataclass configuration for every subsystem.

Defaults follow the reference operating point: a 800x800 occupancy grid at
0.05 m/cell (40 m x 40 m), 0.25 m forward steps, 30 degree turns, perception
window [1.5 m, 10 m], 500-step episode budget, credibility threshold 0.8 with
at most 10 re-perception observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional
import hashlib
import json


@dataclass(frozen=True)
class GridConfig:
    width: int = 800
    height: int = 800
    resolution: float = 0.05          # meters per cell
    origin_x: float = -20.0           # world coordinate of cell (0, 0) corner
    origin_y: float = -20.0
    min_frontier_cells: int = 4       # clusters below this are sensor noise

    @property
    def origin(self) -> tuple[float, float]:
        return (self.origin_x, self.origin_y)


@dataclass(frozen=True)
class SensorConfig:
    max_range: float = 10.0
    min_range: float = 1.5
    fov_deg: float = 90.0
    n_rays: int = 60
    conf_base: float = 0.95           # detection confidence at zero range
    conf_at_max: float = 0.60         # linear falloff endpoint at max_range
    conf_noise: float = 0.05          # +/- uniform, seeded
    fp_reveal_distance: float = 3.0   # injected fakes mimic the goal only beyond this


@dataclass(frozen=True)
class MotionConfig:
    step_m: float = 0.25
    turn_deg: float = 30.0


@dataclass(frozen=True)
class GraphConfig:
    merge_radius: float = 0.5         # same-category detections within this merge
    parallel_tol_deg: float = 15.0    # long-edge "parallel to wall" tolerance
    reproposal_cooldown: int = 10     # steps before an edgeless node re-enters proposal


@dataclass(frozen=True)
class ReasoningConfig:
    min_predicted_distance: float = 0.1   # clamp before inverting to a weight
    min_term_distance: float = 0.5        # clamp on per-term denominators
    fallback_distance: float = 5.0        # used when every prompt stage fails
    credibility_threshold: float = 0.8
    max_observations: int = 10
    explain_subgraphs: int = 3


@dataclass(frozen=True)
class PlannerConfig:
    unknown_cost: float = 2.0         # traversal cost multiplier for unknown cells
    heading_deadband_deg: float = 15.0
    waypoint_radius: float = 0.3      # waypoint considered reached within this
    hold_distance: float = 2.0        # candidate observation holding distance
    stop_distance: float = 0.8        # issue stop within this of the goal
    inflate_cells: int = 2            # obstacle inflation for planning only


@dataclass(frozen=True)
class SceneParams:
    n_rooms: int = 3                  # 2..6
    min_objects_per_room: int = 3
    max_objects_per_room: int = 6     # <= 10
    room_min_side: float = 3.5
    room_max_side: float = 5.5
    n_false_positives: int = 0
    relation_density: float = 1.0     # fraction of eligible ground-truth pairs kept
    goal_category: Optional[str] = None

    def validate(self) -> None:
        if not (2 <= self.n_rooms <= 6):
            raise ValueError("n_rooms must be within [2, 6]")
        if not (3 <= self.min_objects_per_room <= self.max_objects_per_room <= 10):
            raise ValueError("objects per room must be within [3, 10]")


@dataclass
class AblationFlags:
    reperception: bool = True
    scene_graph: bool = True
    rooms: bool = True
    groups: bool = True
    edges: str = "all"                # none | short | long | all
    prompting: str = "cot"            # cot | flat-text

    def __post_init__(self) -> None:
        if self.edges not in ("none", "short", "long", "all"):
            raise ValueError(f"unknown edge mode: {self.edges}")
        if self.prompting not in ("cot", "flat-text"):
            raise ValueError(f"unknown prompting mode: {self.prompting}")


@dataclass
class EpisodeConfig:
    seed: int = 0
    scene_path: Optional[Path] = None     # overrides seed-based generation
    goal: Optional[str] = None            # defaults to the scene's designated goal
    max_steps: int = 500
    success_distance: float = 1.0
    provider: str = "scripted"            # scripted | http
    script_path: Optional[Path] = None    # scripted provider pattern/response file
    vlm_error_rate: float = 0.0
    out_dir: Optional[Path] = None
    ablations: AblationFlags = field(default_factory=AblationFlags)
    scene_params: SceneParams = field(default_factory=SceneParams)
    grid: GridConfig = field(default_factory=GridConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    reasoning: ReasoningConfig = field(default_factory=ReasoningConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def fingerprint(self) -> str:
        """Stable hash of everything that influences an episode's outcome."""
        payload = asdict(self)
        payload["scene_path"] = str(payload["scene_path"]) if payload["scene_path"] else None
        payload.pop("out_dir")
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
