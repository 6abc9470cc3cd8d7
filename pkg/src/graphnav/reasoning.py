"""Goal inference over subgraphs.

Each subgraph is scored by a four-stage prompt sequence (object-goal
distance, question generation, subgraph-grounded answering, summary
distance); the summary distance inverts into a subgraph weight, weights
interpolate onto frontiers by inverse distance, and the same weights drive
the credibility accumulation that accepts or rejects a detected goal
candidate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from . import prompts
from .config import ReasoningConfig
from .exceptions import ExplorationExhausted, ResponseParseError
from .llm import CompletionRequest, LlmBackend, LlmTranscript, parse_structured
from .mapping import Frontier
from .scene_graph import Subgraph

logger = logging.getLogger(__name__)


@dataclass
class SubgraphScore:
    subgraph_id: int
    central_position: tuple[float, float]
    predicted_distance: float        # meters, already clamped positive
    p_sub: float                     # 1 / max(distance, clamp)
    transcript: LlmTranscript
    graph_revision: int
    goal: str
    content_hash: str = ""


@dataclass
class FrontierScore:
    frontier_id: int
    score: float
    terms: list[tuple[int, float, float]]    # (subgraph id, D_ij, term value)


@dataclass
class CredibilityState:
    """Accumulated re-perception evidence for one goal candidate."""

    candidate_id: int
    s_thres: float = 0.8
    n_max: int = 10
    cumulative: float = 0.0
    observations: int = 0
    crossed_at: Optional[int] = None     # observation index of first crossing

    @property
    def overflowed(self) -> bool:
        return self.observations >= self.n_max


def subgraph_probability(distance: float, min_distance: float = 0.1) -> float:
    """Inverse predicted distance, clamped so the weight stays finite."""
    if distance < 0:
        raise ValueError(f"negative distance: {distance}")
    return 1.0 / max(distance, min_distance)


def _complete_stage(
    llm: LlmBackend,
    transcript: LlmTranscript,
    stage: str,
    prompt: str,
    shape: str,
    metadata: dict,
    max_retries: int = 2,
):
    """One prompt stage with bounded retry; returns parsed value or None."""
    request = CompletionRequest(prompt=prompt, request_id=stage, metadata=metadata)
    response = ""
    for attempt in range(max_retries + 1):
        response = llm.complete(request)
        try:
            value = parse_structured(response, shape)
            transcript.add(stage, prompt, response, "ok" if attempt == 0 else "retried")
            return value
        except ResponseParseError:
            continue
    transcript.add(stage, prompt, response, "error")
    return None


def cot_predict_distance(
    subgraph: Subgraph,
    goal: str,
    llm: LlmBackend,
    config: Optional[ReasoningConfig] = None,
) -> tuple[float, LlmTranscript]:
    """Four-stage distance prediction for one subgraph.

    Stage failures retry twice; a failed summary falls back to the stage-1
    object distance, and a failed stage 1 falls back to a flagged default.
    """
    cfg = config or ReasoningConfig()
    transcript = LlmTranscript()
    meta = {
        "kind": "cot",
        "central_id": subgraph.central_id,
        "central_category": subgraph.central_category,
        "central_position": subgraph.central_position,
        "goal": goal,
    }

    step1 = _complete_stage(
        llm, transcript, "step1_object_distance",
        prompts.render_object_distance_prompt(subgraph.central_category, goal),
        "distance", meta,
    )
    question = None
    if step1 is not None:
        q = _complete_stage(
            llm, transcript, "step2_ask_question",
            prompts.render_ask_question_prompt(subgraph.central_category, goal),
            "question", meta,
        )
        if q is not None:
            question = q["question"]
    if question is not None:
        _complete_stage(
            llm, transcript, "step3_answer_question",
            prompts.render_answer_question_prompt(subgraph.payload(), question),
            "answer", meta,
        )
        step4 = _complete_stage(
            llm, transcript, "step4_subgraph_distance",
            prompts.render_subgraph_distance_prompt(subgraph.payload(), goal),
            "distance", meta,
        )
        if step4 is not None:
            return float(step4["distance"]), transcript
    if step1 is not None:
        transcript.add("fallback", "", "", "fallback")
        return float(step1["distance"]), transcript
    transcript.add("fallback", "", "", "fallback")
    logger.warning("all prompt stages failed for subgraph %d; default distance used",
                   subgraph.central_id)
    return cfg.fallback_distance, transcript


def flat_text_predict_distance(
    subgraph: Subgraph,
    goal: str,
    llm: LlmBackend,
    config: Optional[ReasoningConfig] = None,
) -> tuple[float, LlmTranscript]:
    """Single-prompt baseline: the subgraph flattened to plain text."""
    cfg = config or ReasoningConfig()
    transcript = LlmTranscript()
    description = "; ".join(subgraph.nodes + subgraph.edges)
    meta = {
        "kind": "flat",
        "central_id": subgraph.central_id,
        "central_category": subgraph.central_category,
        "central_position": subgraph.central_position,
        "goal": goal,
    }
    value = _complete_stage(
        llm, transcript, "flat_text_distance",
        prompts.render_flat_text_prompt(description, goal), "distance", meta,
    )
    if value is None:
        return cfg.fallback_distance, transcript
    return float(value["distance"]), transcript


class ScoreCache:
    """Prompt-level cache keyed by (subgraph content hash, goal).

    A SubgraphScore itself is only reused while the graph revision and goal
    match; when the revision moves but a subgraph's prompt-visible content is
    unchanged, the cached distance and transcript are reused without
    re-prompting.
    """

    def __init__(self):
        self._by_content: dict[tuple[str, str], tuple[float, LlmTranscript]] = {}
        self._scores: dict[int, SubgraphScore] = {}

    def lookup_score(self, subgraph_id: int, revision: int, goal: str) -> Optional[SubgraphScore]:
        score = self._scores.get(subgraph_id)
        if score and score.graph_revision == revision and score.goal == goal:
            return score
        return None

    def lookup_distance(self, content_hash: str, goal: str):
        return self._by_content.get((content_hash, goal))

    def store(self, score: SubgraphScore) -> None:
        self._scores[score.subgraph_id] = score
        self._by_content[(score.content_hash, score.goal)] = (
            score.predicted_distance,
            score.transcript,
        )


def score_subgraphs(
    subgraphs: Sequence[Subgraph],
    goal: str,
    llm: LlmBackend,
    revision: int,
    cache: Optional[ScoreCache] = None,
    config: Optional[ReasoningConfig] = None,
    prompting: str = "cot",
) -> list[SubgraphScore]:
    """Predict a distance for every subgraph, reusing cached predictions for
    unchanged subgraph content."""
    cfg = config or ReasoningConfig()
    predict = cot_predict_distance if prompting == "cot" else flat_text_predict_distance
    scores: list[SubgraphScore] = []
    for sub in subgraphs:
        if cache is not None:
            ready = cache.lookup_score(sub.central_id, revision, goal)
            if ready is not None:
                scores.append(ready)
                continue
        chash = sub.content_hash()
        cached = cache.lookup_distance(chash, goal) if cache is not None else None
        if cached is not None:
            distance, transcript = cached
        else:
            distance, transcript = predict(sub, goal, llm, cfg)
        distance = max(float(distance), cfg.min_predicted_distance)
        score = SubgraphScore(
            subgraph_id=sub.central_id,
            central_position=sub.central_position,
            predicted_distance=distance,
            p_sub=subgraph_probability(distance, cfg.min_predicted_distance),
            transcript=transcript,
            graph_revision=revision,
            goal=goal,
            content_hash=chash,
        )
        if cache is not None:
            cache.store(score)
        scores.append(score)
    return scores


def score_frontiers(
    frontiers: Sequence[Frontier],
    scores: Sequence[SubgraphScore],
    centers: Optional[Sequence[tuple[float, float]]] = None,
    min_term_distance: float = 0.5,
) -> list[FrontierScore]:
    """Interpolate subgraph weights onto frontiers: sum of p_sub / D_ij over
    every subgraph, with the distance clamped away from zero."""
    if centers is None:
        centers = [s.central_position for s in scores]
    out: list[FrontierScore] = []
    for frontier in frontiers:
        fx, fy = frontier.centroid
        terms: list[tuple[int, float, float]] = []
        total = 0.0
        for s, (cx, cy) in zip(scores, centers):
            d = max(math.hypot(fx - cx, fy - cy), min_term_distance)
            term = s.p_sub / d
            terms.append((s.subgraph_id, d, term))
            total += term
        out.append(FrontierScore(frontier_id=frontier.id, score=total, terms=terms))
    return out


def select_frontier(
    scores: Sequence[FrontierScore],
    distance_to_agent: Callable[[int], float],
) -> int:
    """Highest score wins; ties resolve to the frontier nearest the agent,
    then the smallest id. All-zero scores degrade to nearest-frontier."""
    if not scores:
        raise ExplorationExhausted("no frontiers to select")
    best = min(scores, key=lambda fs: (-fs.score, distance_to_agent(fs.frontier_id), fs.frontier_id))
    return best.frontier_id


def explain_decision(
    selected_frontier: int,
    frontier_scores: Sequence[FrontierScore],
    subgraph_scores: Sequence[SubgraphScore],
    llm: LlmBackend,
    explain_k: int = 3,
) -> tuple[str, list[int]]:
    """Summarize the reasoning of the few subgraphs nearest the selected
    frontier. Falls back to concatenated per-subgraph reasons when the
    summary completion fails."""
    fs = next(f for f in frontier_scores if f.frontier_id == selected_frontier)
    nearest = sorted(fs.terms, key=lambda t: (t[1], t[0]))[:explain_k]
    cited = [sid for sid, _, _ in nearest]
    by_id = {s.subgraph_id: s for s in subgraph_scores}
    reasons = []
    for sid in cited:
        transcript = by_id[sid].transcript
        reason = ""
        for record in transcript.records:
            if record.stage.startswith(("step4", "step1", "flat")) and record.parse_status != "error":
                try:
                    reason = parse_structured(record.response, "distance")["reason"]
                except ResponseParseError:
                    continue
        reasons.append(reason or f"subgraph {sid} scored {by_id[sid].p_sub:.2f}")
    prompt = prompts.render_summary_prompt(reasons)
    try:
        text = llm.complete(CompletionRequest(prompt=prompt, request_id="explain",
                                              metadata={"kind": "summary"}))
    except Exception as err:
        logger.warning("summary completion failed (%s); concatenating reasons", err)
        text = " ".join(reasons)
    return text, cited


def credibility_step(
    state: CredibilityState,
    c_k: float,
    scores: Sequence[SubgraphScore],
    candidate_position: tuple[float, float],
    min_term_distance: float = 0.5,
) -> CredibilityState:
    """Accumulate one observation: S_k = C_k * sum_j p_sub_j / D_j with D_j
    the distance from each subgraph's central node to the candidate."""
    if not (0.0 <= c_k <= 1.0):
        raise ValueError(f"confidence out of range: {c_k}")
    if state.overflowed:
        logger.debug("credibility overflow for candidate %d; no-op", state.candidate_id)
        return state
    total = 0.0
    for s in scores:
        d = max(
            math.hypot(candidate_position[0] - s.central_position[0],
                       candidate_position[1] - s.central_position[1]),
            min_term_distance,
        )
        total += s.p_sub / d
    state.cumulative += c_k * total
    state.observations += 1
    if state.crossed_at is None and state.cumulative >= state.s_thres:
        state.crossed_at = state.observations
    return state


def reperception_verdict(state: CredibilityState) -> str:
    """accept | continue | reject.

    Accept requires the cumulative score to cross the threshold strictly
    before the observation budget is exhausted; crossing exactly at the
    budget, or never crossing, rejects the candidate.
    """
    if state.crossed_at is not None:
        return "accept" if state.crossed_at < state.n_max else "reject"
    if state.observations < state.n_max:
        return "continue"
    return "reject"
