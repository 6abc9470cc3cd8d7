"""Episode loop: observe, update the map and scene graph, and either chase a
detected goal candidate through re-perception or keep exploring the
highest-scored frontier.

The loop issues exactly one simulator action per iteration, so the trace is
a complete, replayable record of the episode.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import planner, reasoning, scene_graph as sg
from .config import EpisodeConfig
from .exceptions import EpisodeFaultError, ProviderUnavailableError
from .llm import LlmBackend, LlmTranscript, ScriptedProvider, HttpProvider
from .mapping import (
    DistanceField,
    OccupancyGrid,
    extract_frontiers,
    frontier_mask,
    integrate_depth,
)
from .metrics import EpisodeResult, compute_soft_spl, compute_spl
from .planner import Action, ApproachObserver
from .simulator import (
    GroundTruthVlm,
    Observation,
    OraclePriorProvider,
    Scene,
    Simulator,
    check_success,
    generate_scene,
)

logger = logging.getLogger(__name__)

PANORAMA_TURNS = 12            # 12 x 30 degrees = one full sweep
REPLAN_INTERVAL = 20
FRONTIER_ARRIVE_M = 0.6


class _PromptCounter:
    def __init__(self, inner: LlmBackend):
        self.inner = inner
        self.count = 0

    def complete(self, request):
        self.count += 1
        return self.inner.complete(request)


def build_provider(config: EpisodeConfig, scene: Scene) -> LlmBackend:
    if config.provider == "http":
        return HttpProvider()
    if config.script_path is not None:
        return ScriptedProvider.from_file(config.script_path, strict_order=False)
    return OraclePriorProvider(scene)


@dataclass
class _Explanation:
    step: int
    frontier_id: int
    text: str
    cited_subgraphs: list[int]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "frontier_id": self.frontier_id,
            "text": self.text,
            "cited_subgraphs": self.cited_subgraphs,
        }


class EpisodeRunner:
    """Owns all per-episode state; single-writer over graph and grid."""

    def __init__(self, config: EpisodeConfig, scene: Optional[Scene] = None,
                 provider: Optional[LlmBackend] = None):
        self.config = config
        if scene is None:
            if config.scene_path is not None:
                scene = Scene.load(config.scene_path, config.grid)
            else:
                scene = generate_scene(config.seed, config.scene_params, config.grid)
        self.scene = scene
        if config.goal:
            scene.goal_category = config.goal
        self.goal = scene.goal_category
        self.sim = Simulator(scene, config.sensor, config.motion, config.max_steps)
        self.grid = OccupancyGrid(config.grid)
        self.graph = sg.SceneGraph(config.graph)
        self.covis = sg.CovisibilityLog()
        self.lexicon = sg.RelatedCategoryLexicon()
        self.vlm = GroundTruthVlm(scene, config.vlm_error_rate, seed=config.seed)
        self.llm = _PromptCounter(provider or build_provider(config, scene))
        self.cache = reasoning.ScoreCache()
        self.ablate = config.ablations
        if not self.ablate.scene_graph:
            # credibility needs subgraph weights; without the graph the
            # candidate is trusted outright (the degraded baseline)
            self.ablate.reperception = False

        self.blacklist: set[int] = set()
        self.room_map: dict[int, int] = {}      # scene room id -> graph node id
        self.explanations: list[_Explanation] = []
        self.transcript_archive: list[dict] = []
        self.unknown_counts: list[int] = []
        self._edge_cooldown: dict[int, int] = {}

        # control state
        self._phase = "panorama"
        self._pano_left = PANORAMA_TURNS
        self._waypoints: Optional[list[tuple[float, float]]] = None
        self._target_cells: Optional[np.ndarray] = None
        self._target_centroid: Optional[tuple[float, float]] = None
        self._last_plan_step = -1
        self._unreachable_frontiers: list[tuple[float, float]] = []
        self._inspected_frontiers: list[tuple[float, float]] = []
        self._approach: Optional[ApproachObserver] = None
        self._candidate_id: Optional[int] = None
        self._credibility: Optional[reasoning.CredibilityState] = None
        self._collided = False
        self._bump_streak = 0

    # -- perception and graph maintenance ------------------------------------

    def _process_observation(self, obs: Observation, step: int) -> None:
        pose = self.state.pose
        integrate_depth(self.grid, pose, obs.depth)
        # the agent's own cell is traversable by physical evidence; nothing
        # more (the sensing floor hides nearby obstacles, so a generous disk
        # would invent free space inside them)
        self.grid.mark_free_disk(pose.x, pose.y, 0.1)
        if obs.collided:
            self._mark_collision(pose)
            self._bump_streak += 1
        else:
            self._bump_streak = 0
        self.unknown_counts.append(self.grid.unknown_count)
        self._collided = obs.collided

        if self.ablate.rooms and self.ablate.scene_graph:
            self._discover_rooms()

        if not obs.detections:
            return
        ids = sg.register_detections(self.graph, obs.detections, step)
        self.covis.record(step, ids)
        if not self.ablate.scene_graph or self.ablate.edges == "none":
            return
        existing_before = set(self.graph.objects) - set(ids)
        new_ids = [i for i in ids if self.graph.objects[i].first_seen == step
                   and i not in existing_before]
        new_ids = list(dict.fromkeys(new_ids))
        # re-observed nodes that lost every edge re-enter proposal, throttled
        for i in ids:
            if i in new_ids:
                continue
            if self.graph.edges_of(i):
                continue
            if step - self._edge_cooldown.get(i, -10 ** 9) < self.config.graph.reproposal_cooldown:
                continue
            new_ids.append(i)
        if new_ids:
            for i in new_ids:
                self._edge_cooldown[i] = step
            self._propose_and_prune(new_ids)
        if self.ablate.groups:
            sg.form_groups(self.graph, self.lexicon)
        if self.ablate.rooms:
            sg.assign_room_affiliations(self.graph)

    def _mark_collision(self, pose) -> None:
        """Blocked forward motion is contact evidence: everything the motion
        segment would have crossed (except the cell under the agent) is
        treated as occupied, since the depth sensor cannot see this close."""
        h = pose.heading_rad()
        step_m = self.config.motion.step_m
        res = self.grid.config.resolution
        own = self.grid.world_to_cell(pose.x, pose.y)
        n = max(2, int(math.ceil(step_m / res)) + 1)
        for k in range(1, n + 1):
            t = step_m * k / n
            cell = self.grid.world_to_cell(pose.x + t * math.cos(h),
                                           pose.y + t * math.sin(h))
            if cell != own:
                self.grid.mark_occupied_cell(*cell)

    def _discover_rooms(self) -> None:
        from .gridops import FREE

        for room in self.scene.rooms:
            if room.id in self.room_map:
                continue
            region = self.scene.room_regions[room.id]
            if not region:
                continue
            idx = np.array(sorted(region))
            if (self.grid.cells[idx[:, 0], idx[:, 1]] == FREE).any():
                nid = self.graph.add_room(room.room_type, region, room.wall_segments())
                self.room_map[room.id] = nid

    def _propose_and_prune(self, new_ids: list[int]) -> None:
        transcript = LlmTranscript()
        candidates = sg.propose_edges_batched(self.graph, new_ids, self.llm, transcript)
        for record in transcript.records:
            self.transcript_archive.append(
                {"step": self.state.step_count, **record.to_dict()}
            )
        for edge in candidates:
            if edge.key in self.graph.relation_edges:
                continue
            rng_class = sg.classify_edge_range(edge, self.covis)
            if self.ablate.edges == "short" and rng_class != sg.SHORT:
                continue
            if self.ablate.edges == "long" and rng_class != sg.LONG:
                continue
            if rng_class == sg.SHORT:
                keep = sg.prune_short_edge(edge, self.graph, self.vlm)
            else:
                keep = sg.prune_long_edge(edge, self.graph, self.grid)
            if keep:
                self.graph.add_relation_edge(edge)

    # -- scoring and frontier selection ---------------------------------------

    def _score_and_select(self) -> Optional[tuple[float, float]]:
        """Pick the next frontier target; None when exploration is exhausted."""
        frontiers = extract_frontiers(self.grid)
        # skip frontiers that proved unreachable and ones already inspected
        # up close (the sensing floor keeps a small unknown pocket alive
        # around any standpoint, so they can never be cleared by revisiting)
        skip = [(p, 0.4) for p in self._unreachable_frontiers]
        skip += [(p, 0.75) for p in self._inspected_frontiers]
        frontiers = [
            f for f in frontiers
            if not any(math.hypot(f.centroid[0] - px, f.centroid[1] - py) < r
                       for (px, py), r in skip)
        ]
        if not frontiers:
            return None
        pose = self.state.pose
        agent_field = DistanceField(self.grid, pose.position)
        distances = {f.id: agent_field.at(f.centroid) for f in frontiers}

        if self.ablate.scene_graph:
            subgraphs = sg.decompose_subgraphs(
                self.graph,
                include_rooms=self.ablate.rooms,
                include_groups=self.ablate.groups,
                edge_filter=self.ablate.edges,
            )
            scores = reasoning.score_subgraphs(
                subgraphs, self.goal, self.llm, self.graph.revision,
                self.cache, self.config.reasoning, self.ablate.prompting,
            )
            fscores = reasoning.score_frontiers(
                frontiers, scores,
                min_term_distance=self.config.reasoning.min_term_distance,
            )
        else:
            scores = []
            fscores = [reasoning.FrontierScore(f.id, 0.0, []) for f in frontiers]

        selected = reasoning.select_frontier(
            fscores, lambda fid: distances.get(fid, math.inf)
        )
        chosen = next(f for f in frontiers if f.id == selected)
        if self.ablate.scene_graph and scores:
            text, cited = reasoning.explain_decision(
                selected, fscores, scores, self.llm,
                self.config.reasoning.explain_subgraphs,
            )
            self.explanations.append(
                _Explanation(self.state.step_count, selected, text, cited)
            )
        self._target_cells = chosen.cells
        self._target_centroid = chosen.centroid
        return chosen.centroid

    def _target_still_frontier(self) -> bool:
        if self._target_cells is None:
            return False
        mask = frontier_mask(self.grid.cells)
        alive = int(mask[self._target_cells[:, 0], self._target_cells[:, 1]].sum())
        return alive >= max(self.grid.config.min_frontier_cells,
                            len(self._target_cells) // 4)

    # -- candidate handling ----------------------------------------------------

    def _find_candidate(self) -> Optional[int]:
        best, best_d = None, math.inf
        pose = self.state.pose
        for oid in sorted(self.graph.objects):
            node = self.graph.objects[oid]
            if oid in self.blacklist or node.category != self.goal:
                continue
            d = math.hypot(node.position[0] - pose.x, node.position[1] - pose.y)
            if d < best_d:
                best, best_d = oid, d
        return best

    def _candidate_scores(self) -> list[reasoning.SubgraphScore]:
        subgraphs = sg.decompose_subgraphs(
            self.graph,
            include_rooms=self.ablate.rooms,
            include_groups=self.ablate.groups,
            edge_filter=self.ablate.edges,
        )
        return reasoning.score_subgraphs(
            subgraphs, self.goal, self.llm, self.graph.revision,
            self.cache, self.config.reasoning, self.ablate.prompting,
        )

    def _begin_approach(self, candidate_id: int) -> None:
        self._candidate_id = candidate_id
        self._approach = ApproachObserver(
            self.graph.objects[candidate_id].position, self.config.planner
        )
        cfg = self.config.reasoning
        self._credibility = reasoning.CredibilityState(
            candidate_id, s_thres=cfg.credibility_threshold, n_max=cfg.max_observations
        )
        self._phase = "approach"

    def _observe_candidate(self, obs: Observation) -> str:
        """Feed the current frame to the credibility test; returns verdict."""
        node = self.graph.objects[self._candidate_id]
        c_k = 0.0
        for det in obs.detections:
            if det.category != node.category:
                continue
            d = math.hypot(det.centroid[0] - node.position[0],
                           det.centroid[1] - node.position[1])
            if d <= self.config.graph.merge_radius:
                c_k = max(c_k, det.confidence)
        scores = self._candidate_scores()
        reasoning.credibility_step(
            self._credibility, c_k, scores, node.position,
            self.config.reasoning.min_term_distance,
        )
        return reasoning.reperception_verdict(self._credibility)

    # -- main loop ---------------------------------------------------------------

    def run(self) -> EpisodeResult:
        self.state, obs = self.sim.reset()
        self._process_observation(obs, 0)
        cause = ""
        last_obs = obs
        try:
            while not self.state.terminated:
                if self.state.step_count >= self.config.max_steps:
                    break
                action = self._decide(last_obs)
                if action is None:
                    cause = "exploration-exhausted"
                    break
                assert self.state.step_count < self.config.max_steps
                self.state, last_obs = self.sim.step(self.state, action)
                self._process_observation(last_obs, self.state.step_count)
        except ProviderUnavailableError as err:
            logger.error("provider failure: %s", err)
            cause = "provider-failure"
        if cause and not self.state.terminated:
            self.state.terminated = True
            self.state.termination_cause = cause
        return self._result()

    def _decide(self, last_obs: Observation) -> Optional[Action]:
        # a known goal candidate always preempts exploration
        if self._phase in ("panorama", "explore", "arrive-panorama"):
            candidate = self._find_candidate()
            if candidate is not None:
                if self.ablate.reperception:
                    self._begin_approach(candidate)
                else:
                    self._candidate_id = candidate
                    self._approach = None
                    self._phase = "final"
                    self._waypoints = None

        if self._phase == "panorama" or self._phase == "arrive-panorama":
            if self._pano_left > 0:
                self._pano_left -= 1
                return Action.TURN_LEFT
            self._phase = "explore"
            self._waypoints = None
            self._target_cells = None

        if self._phase == "explore":
            return self._decide_explore()
        if self._phase == "approach":
            return self._decide_approach(last_obs)
        if self._phase == "final":
            return self._decide_final()
        raise EpisodeFaultError(f"unknown phase {self._phase}")

    def _decide_explore(self) -> Optional[Action]:
        pose = self.state.pose
        need_select = self._target_cells is None or not self._target_still_frontier()
        if not need_select and self._waypoints:
            fx, fy = self._waypoints[-1]
            if math.hypot(fx - pose.x, fy - pose.y) <= FRONTIER_ARRIVE_M:
                if self._target_centroid is not None:
                    self._inspected_frontiers.append(self._target_centroid)
                self._phase = "arrive-panorama"
                self._pano_left = PANORAMA_TURNS
                self._target_cells = None
                self._target_centroid = None
                self._waypoints = None
                return Action.TURN_LEFT
        if need_select:
            target = self._score_and_select()
            if target is None:
                return None
            self._waypoints = planner.plan_path(
                self.grid, pose.position, target, self.config.planner.unknown_cost
            )
            self._last_plan_step = self.state.step_count
            if self._waypoints is None:
                self._unreachable_frontiers.append(target)
                self._target_cells = None
                return self._decide_explore() if len(self._unreachable_frontiers) < 50 else None
        elif (
            self._collided
            or self.state.step_count - self._last_plan_step >= REPLAN_INTERVAL
            or not self._waypoints
        ):
            target = self._waypoints[-1] if self._waypoints else None
            if target is not None:
                self._waypoints = planner.plan_path(
                    self.grid, pose.position, target, self.config.planner.unknown_cost
                )
                self._last_plan_step = self.state.step_count
            if self._waypoints is None:
                self._target_cells = None
                return self._decide_explore()
        self._waypoints = planner.prune_reached(
            pose, self._waypoints, self.config.planner.waypoint_radius
        )
        if self._bump_streak >= 3:
            self._bump_streak = 0
            self._waypoints = None
            return Action.TURN_LEFT
        return planner.next_action(pose, self._waypoints, self.config.planner)

    def _decide_approach(self, last_obs: Observation) -> Optional[Action]:
        if self._collided:
            self._approach.invalidate_plan()
        if self._bump_streak >= 3:
            self._bump_streak = 0
            return Action.TURN_LEFT
        mode, action = self._approach.decide(self.grid, self.state.pose)
        if mode == "unreachable":
            logger.info("candidate %d unreachable; rejecting", self._candidate_id)
            self.blacklist.add(self._candidate_id)
            self._reset_exploration()
            return self._decide(last_obs)
        if mode == "observe":
            verdict = self._observe_candidate(last_obs)
            if verdict == "accept":
                self._phase = "final"
                self._waypoints = None
                return self._decide_final()
            if verdict == "reject":
                self.blacklist.add(self._candidate_id)
                self._reset_exploration()
                return self._decide(last_obs)
        return action

    def _decide_final(self) -> Optional[Action]:
        pose = self.state.pose
        target = self.graph.objects[self._candidate_id].position
        if math.hypot(target[0] - pose.x, target[1] - pose.y) <= self.config.planner.stop_distance:
            return Action.STOP
        if self._collided or not self._waypoints or \
                self.state.step_count - self._last_plan_step >= REPLAN_INTERVAL:
            self._waypoints = planner.plan_path(
                self.grid, pose.position, target, self.config.planner.unknown_cost
            )
            self._last_plan_step = self.state.step_count
        if self._waypoints is None:
            self.blacklist.add(self._candidate_id)
            self._reset_exploration()
            return Action.TURN_LEFT
        self._waypoints = planner.prune_reached(
            pose, self._waypoints, self.config.planner.waypoint_radius
        )
        if self._bump_streak >= 3:
            self._bump_streak = 0
            self._waypoints = None
            return Action.TURN_LEFT
        return planner.next_action(
            pose, self._waypoints, self.config.planner,
            stop_radius=self.config.planner.stop_distance,
        )

    def _reset_exploration(self) -> None:
        self._phase = "explore"
        self._waypoints = None
        self._target_cells = None
        self._approach = None
        self._candidate_id = None
        self._credibility = None

    # -- results -------------------------------------------------------------

    def _result(self) -> EpisodeResult:
        state = self.state
        success, reason = check_success(
            self.scene, state, self.config.success_distance
        )
        optimal = self.sim.optimal_path_length()
        d_init = optimal
        d_final = self.sim.distance_to_goal(state.pose.position)
        spl = compute_spl(success, state.path_length, optimal)
        soft = compute_soft_spl(d_init, d_final, state.path_length, optimal)
        result = EpisodeResult(
            seed=self.config.seed,
            goal=self.goal,
            success=success,
            termination_cause=state.termination_cause or reason,
            steps=state.step_count,
            path_length=round(state.path_length, 6),
            optimal_length=round(optimal, 6),
            spl=spl,
            soft_spl=soft,
            final_distance=round(d_final, 6) if math.isfinite(d_final) else -1.0,
            llm_prompts=self.llm.count,
            explanations=[e.to_dict() for e in self.explanations],
            trace=list(state.trace),
            config_fingerprint=self.config.fingerprint(),
        )
        if self.config.out_dir is not None:
            self._write_artifacts(result)
        return result

    def _write_artifacts(self, result: EpisodeResult) -> None:
        out = Path(self.config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"episode_{self.config.seed}"
        _atomic_write(out / f"{stem}_trace.json", json.dumps(result.trace, indent=2))
        _atomic_write(out / f"{stem}_result.json", json.dumps(result.to_dict(), indent=2))
        lines = [json.dumps(rec, sort_keys=True) for rec in self.transcript_archive]
        _atomic_write(out / f"{stem}_transcripts.jsonl", "\n".join(lines))
        _atomic_write(out / f"{stem}_graph.txt", self.graph.to_text())
        (out / f"{stem}_map.pgm").write_bytes(self.grid.to_pgm())


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def run_episode(config: EpisodeConfig, scene: Optional[Scene] = None,
                provider: Optional[LlmBackend] = None) -> EpisodeResult:
    """Execute one full episode; provider failures abort with a diagnostic
    result rather than raising."""
    return EpisodeRunner(config, scene=scene, provider=provider).run()


def run_benchmark(configs: list[EpisodeConfig], jobs: int = 1):
    """Run a suite of episodes and aggregate. Episodes are independent;
    aborted ones are counted but excluded from the aggregates."""
    from concurrent.futures import ThreadPoolExecutor

    from .metrics import BenchmarkReport, fingerprint_suite

    def one(cfg: EpisodeConfig) -> Optional[EpisodeResult]:
        try:
            return run_episode(cfg)
        except Exception as err:
            logger.error("episode seed=%s aborted: %s", cfg.seed, err)
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(one, configs))
    else:
        raw = [one(cfg) for cfg in configs]
    results = [r for r in raw if r is not None]
    fingerprint = fingerprint_suite({
        "episodes": [c.fingerprint() for c in configs],
    })
    return BenchmarkReport(
        results=results,
        config_fingerprint=fingerprint,
        failures=len(raw) - len(results),
    )
