"""Online hierarchical scene graph.

Three node levels (object, group, room) with affiliation edges across levels
and relation edges between objects. Object nodes are registered or merged
from detections each step; relation edges for the step's new nodes are
proposed with a single batched prompt, then pruned with separate rules for
short-range (co-visible, vision-checked) and long-range (geometry-checked)
edges.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence

from . import gridops, prompts
from .config import GraphConfig
from .exceptions import (
    MalformedObservationError,
    ResponseParseError,
    ScriptMismatchError,
    ProviderUnavailableError,
    UnknownNodeError,
)
from .llm import CompletionRequest, LlmBackend, LlmTranscript, parse_structured
from .mapping import OccupancyGrid

logger = logging.getLogger(__name__)

SHORT = "short"
LONG = "long"

# Unordered category pairs that make two connected objects form a group.
DEFAULT_RELATED_CATEGORIES = (
    ("Bed", "Nightstand"),
    ("Wardrobe", "Dresser"),
    ("Bookshelf", "Chair"),
    ("Counter", "Stove"),
    ("Table", "Chair"),
    ("Bathroom Sink", "Mirror"),
    ("Shower", "Bathtub"),
    ("Refrigerator", "Freezer"),
    ("Oven", "Microwave"),
    ("Washing Machine", "Dryer"),
    ("Sofa", "Table"),
    ("Desk", "Office Chair"),
    ("Computer", "Monitor"),
    ("Piano", "Bench"),
    ("Fireplace", "Mantel"),
    ("Table", "Mirror"),
    ("Window", "Curtains"),
    ("Closet", "Hangers"),
    ("Bathroom Cabinet", "Toiletries"),
    ("Living Room Rug", "Coffee Table"),
    ("Kitchen Cabinet", "Dishes"),
    ("Dining Room Chandelier", "Dining Table"),
    ("Clock", "Wall"),
    ("Floor Lamp", "Reading Chair"),
    ("Couch", "Throw Pillows"),
    ("Bookcase", "Books"),
)


class RelatedCategoryLexicon:
    """Symmetric, case-insensitive lookup of related category pairs."""

    def __init__(self, pairs: Iterable[tuple[str, str]] = DEFAULT_RELATED_CATEGORIES):
        self._pairs = frozenset(frozenset((a.casefold(), b.casefold())) for a, b in pairs)

    def related(self, a: str, b: str) -> bool:
        return frozenset((a.casefold(), b.casefold())) in self._pairs

    def __len__(self) -> int:
        return len(self._pairs)


@dataclass
class ObjectNode:
    id: int
    category: str
    confidence: float
    centroid: tuple[float, float, float]
    footprint: frozenset[tuple[int, int]]
    first_seen: int
    last_seen: int

    @property
    def position(self) -> tuple[float, float]:
        return (self.centroid[0], self.centroid[1])


@dataclass
class GroupNode:
    id: int
    members: set[int]
    label: str


@dataclass
class RoomNode:
    id: int
    room_type: str
    region: frozenset[tuple[int, int]]
    wall_segments: list[tuple[float, float, float, float]]   # x0, y0, x1, y1


@dataclass
class RelationEdge:
    a: int                       # endpoint ids in proposal order
    b: int
    relation: str
    range_class: Optional[str] = None    # SHORT | LONG, set by classification
    verified: bool = False
    flagged: bool = False                # kept fail-open without verification
    frame_ref: Optional[int] = None      # co-visibility frame for short edges

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b) if self.a < self.b else (self.b, self.a)


@dataclass
class AffiliationEdge:
    parent: int      # room id
    child: int       # object or group id


@dataclass
class Subgraph:
    """An object node with its parents and directly connected objects."""

    central_id: int
    central_category: str
    central_position: tuple[float, float]
    object_ids: list[int]
    nodes: list[str]             # prompt-facing node labels, central first
    edges: list[str]             # prompt-facing edge descriptions
    room_id: Optional[int] = None
    group_id: Optional[int] = None

    def payload(self) -> dict:
        return prompts.subgraph_payload(self.nodes, self.edges)

    def content_hash(self) -> str:
        blob = json.dumps(self.payload(), sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()


class CovisibilityLog:
    """Per-step record of which object nodes were detected in the same frame."""

    def __init__(self):
        self._seen_ids: set[int] = set()
        self._pair_first_frame: dict[frozenset, int] = {}

    def record(self, step: int, node_ids: Sequence[int]) -> None:
        unique = sorted(set(node_ids))
        self._seen_ids.update(unique)
        for i, a in enumerate(unique):
            for b in unique[i + 1:]:
                self._pair_first_frame.setdefault(frozenset((a, b)), step)

    def knows(self, node_id: int) -> bool:
        return node_id in self._seen_ids

    def frame_for(self, a: int, b: int) -> Optional[int]:
        return self._pair_first_frame.get(frozenset((a, b)))

    def covisible(self, a: int, b: int) -> bool:
        return self.frame_for(a, b) is not None


class VlmBackend(Protocol):
    def verify_relation(
        self,
        frame: int,
        category_a: str,
        category_b: str,
        position_a: tuple[float, float],
        position_b: tuple[float, float],
        relation: str,
    ) -> bool: ...


class SceneGraph:
    def __init__(self, config: Optional[GraphConfig] = None):
        self.config = config or GraphConfig()
        self.objects: dict[int, ObjectNode] = {}
        self.groups: dict[int, GroupNode] = {}
        self.rooms: dict[int, RoomNode] = {}
        self.relation_edges: dict[tuple[int, int], RelationEdge] = {}
        self.affiliations: dict[int, AffiliationEdge] = {}   # child id -> edge
        self.revision = 0
        self._next_id = 0

    # -- low-level mutation -------------------------------------------------

    def _allocate_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _bump(self) -> None:
        self.revision += 1

    def add_room(self, room_type: str, region: Iterable[tuple[int, int]],
                 wall_segments: list[tuple[float, float, float, float]]) -> int:
        rid = self._allocate_id()
        self.rooms[rid] = RoomNode(rid, room_type, frozenset(region), list(wall_segments))
        self._bump()
        return rid

    def add_relation_edge(self, edge: RelationEdge) -> None:
        if edge.a == edge.b:
            raise ValueError("self relation")
        for nid in (edge.a, edge.b):
            if nid not in self.objects:
                raise UnknownNodeError(nid)
        if edge.key in self.relation_edges:
            raise ValueError(f"duplicate relation edge {edge.key}")
        self.relation_edges[edge.key] = edge
        self._bump()

    def edges_of(self, node_id: int) -> list[RelationEdge]:
        return [e for e in self.relation_edges.values() if node_id in (e.a, e.b)]

    def room_of(self, child_id: int) -> Optional[int]:
        aff = self.affiliations.get(child_id)
        return aff.parent if aff else None

    def group_of(self, object_id: int) -> Optional[int]:
        for gid, group in self.groups.items():
            if object_id in group.members:
                return gid
        return None

    # -- snapshot export ----------------------------------------------------

    def to_text(self) -> str:
        lines = [f"revision {self.revision}"]
        for oid in sorted(self.objects):
            o = self.objects[oid]
            lines.append(
                f"object {oid} {o.category!r} conf={o.confidence:.3f} "
                f"at=({o.centroid[0]:.3f},{o.centroid[1]:.3f},{o.centroid[2]:.3f}) "
                f"cells={len(o.footprint)} seen=[{o.first_seen},{o.last_seen}]"
            )
        for gid in sorted(self.groups):
            g = self.groups[gid]
            lines.append(f"group {gid} {g.label!r} members={sorted(g.members)}")
        for rid in sorted(self.rooms):
            r = self.rooms[rid]
            lines.append(f"room {rid} {r.room_type!r} cells={len(r.region)}")
        for key in sorted(self.relation_edges):
            e = self.relation_edges[key]
            lines.append(
                f"relation {e.a}-{e.b} {e.relation!r} range={e.range_class} "
                f"verified={e.verified} flagged={e.flagged}"
            )
        for child in sorted(self.affiliations):
            aff = self.affiliations[child]
            lines.append(f"affiliation room={aff.parent} child={aff.child}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def register_detections(graph: SceneGraph, detections: Sequence, step: int) -> list[int]:
    """Create or merge one object node per detection; ids in detection order.

    A detection merges into an existing node when the category matches and
    the BEV centroid lies within the merge radius; merging keeps the original
    centroid, takes the max confidence, and unions the footprint.
    """
    ids: list[int] = []
    changed = False
    for det in detections:
        if not det.footprint:
            raise MalformedObservationError(f"empty footprint for {det.category!r}")
        if not (0.0 <= det.confidence <= 1.0):
            raise MalformedObservationError(f"confidence out of range: {det.confidence}")
        cx, cy = det.centroid[0], det.centroid[1]
        best = None
        best_d = graph.config.merge_radius
        for node in graph.objects.values():
            if node.category != det.category:
                continue
            d = math.hypot(node.centroid[0] - cx, node.centroid[1] - cy)
            if d <= best_d:
                best, best_d = node, d
        if best is not None:
            best.confidence = max(best.confidence, det.confidence)
            best.footprint = best.footprint | frozenset(det.footprint)
            best.last_seen = step
            ids.append(best.id)
        else:
            nid = graph._allocate_id()
            centroid = tuple(det.centroid) if len(det.centroid) == 3 else (cx, cy, 0.0)
            graph.objects[nid] = ObjectNode(
                id=nid,
                category=det.category,
                confidence=float(det.confidence),
                centroid=centroid,
                footprint=frozenset(det.footprint),
                first_seen=step,
                last_seen=step,
            )
            ids.append(nid)
        changed = True
    if changed:
        graph._bump()
    return ids


def form_groups(graph: SceneGraph, lexicon: RelatedCategoryLexicon) -> list[int]:
    """Grow groups over relation edges whose categories are related.

    Related-edge components are closed transitively; existing groups absorb
    new members, and components joining several groups collapse into the
    lowest-id one. Returns only newly created group ids (a second run on an
    unchanged graph returns nothing).
    """
    parent: dict[int, int] = {oid: oid for oid in graph.objects}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x: int, y: int) -> None:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for edge in graph.relation_edges.values():
        cat_a = graph.objects[edge.a].category
        cat_b = graph.objects[edge.b].category
        if lexicon.related(cat_a, cat_b):
            union(edge.a, edge.b)

    components: dict[int, set[int]] = {}
    for oid in graph.objects:
        components.setdefault(find(oid), set()).add(oid)

    new_ids: list[int] = []
    changed = False
    for members in components.values():
        if len(members) < 2:
            continue
        overlapping = sorted(
            gid for gid, g in graph.groups.items() if g.members & members
        )
        label = ", ".join(sorted({graph.objects[m].category for m in members}))
        if not overlapping:
            gid = graph._allocate_id()
            graph.groups[gid] = GroupNode(gid, set(members), label)
            new_ids.append(gid)
            changed = True
            continue
        keeper = graph.groups[overlapping[0]]
        if keeper.members != members or keeper.label != label:
            keeper.members = set(members)
            keeper.label = label
            changed = True
        for gid in overlapping[1:]:
            graph.groups.pop(gid)
            graph.affiliations.pop(gid, None)
            changed = True
    if changed:
        graph._bump()
    return new_ids


def assign_room_affiliations(graph: SceneGraph) -> list[AffiliationEdge]:
    """Object->room edges by footprint containment, group->room edges when
    every member agrees. Idempotent; straddling objects stay unaffiliated."""
    new_edges: list[AffiliationEdge] = []
    for oid in sorted(graph.objects):
        if oid in graph.affiliations:
            continue
        node = graph.objects[oid]
        for rid in sorted(graph.rooms):
            if node.footprint <= graph.rooms[rid].region:
                edge = AffiliationEdge(parent=rid, child=oid)
                graph.affiliations[oid] = edge
                new_edges.append(edge)
                break
        else:
            if graph.rooms and any(
                node.footprint & graph.rooms[rid].region for rid in graph.rooms
            ):
                logger.debug("object %d footprint straddles rooms; no affiliation", oid)
    for gid in sorted(graph.groups):
        if gid in graph.affiliations:
            continue
        rooms = {graph.room_of(m) for m in graph.groups[gid].members}
        if len(rooms) == 1 and None not in rooms:
            edge = AffiliationEdge(parent=rooms.pop(), child=gid)
            graph.affiliations[gid] = edge
            new_edges.append(edge)
    if new_edges:
        graph._bump()
    return new_edges


def enumerate_pairs(graph: SceneGraph, new_node_ids: Sequence[int]) -> list[tuple[int, int]]:
    """Pair list for batched proposal: each new node against all previous
    nodes plus deduplicated new-new pairs, m*n + m*(m-1)/2 in total."""
    new_set = list(dict.fromkeys(new_node_ids))
    for nid in new_set:
        if nid not in graph.objects:
            raise UnknownNodeError(nid)
    previous = [oid for oid in sorted(graph.objects) if oid not in set(new_set)]
    pairs = [(a, b) for a in new_set for b in previous]
    pairs += [(new_set[i], new_set[j]) for i in range(len(new_set)) for j in range(i + 1, len(new_set))]
    return pairs


def propose_edges_batched(
    graph: SceneGraph,
    new_node_ids: Sequence[int],
    llm: LlmBackend,
    transcript: Optional[LlmTranscript] = None,
    max_retries: int = 2,
) -> list[RelationEdge]:
    """Ask for relations over every (new, new-or-previous) pair in one prompt.

    The structured response is matched to the pair list positionally. On a
    length mismatch or parse failure the same prompt is retried, then any
    pairs without a response are dropped.
    """
    pairs = enumerate_pairs(graph, new_node_ids)
    if not pairs:
        return []
    cat_pairs = [(graph.objects[a].category, graph.objects[b].category) for a, b in pairs]
    prompt = prompts.render_edge_prompt(cat_pairs)
    request = CompletionRequest(
        prompt=prompt,
        request_id=f"edges@{graph.revision}",
        metadata={
            "kind": "edge_proposal",
            "pairs": [
                {
                    "a": a,
                    "b": b,
                    "a_position": graph.objects[a].position,
                    "b_position": graph.objects[b].position,
                    "a_category": graph.objects[a].category,
                    "b_category": graph.objects[b].category,
                }
                for a, b in pairs
            ],
        },
    )
    relations: Optional[list[str]] = None
    status = "ok"
    for attempt in range(max_retries + 1):
        response = llm.complete(request)
        try:
            parsed = parse_structured(response, "relations")
        except ResponseParseError:
            status = "retried"
            continue
        if len(parsed) == len(pairs):
            relations = parsed
            break
        status = "retried"
        relations = parsed    # keep the best-effort parse for the drop path
    if transcript is not None:
        transcript.add("edge_proposal", prompt, response, status)
    if relations is None:
        logger.warning("edge proposal unparseable after %d attempts; dropping %d pairs",
                       max_retries + 1, len(pairs))
        return []
    if len(relations) != len(pairs):
        logger.warning("edge proposal length mismatch (%d responses, %d pairs); dropping tail",
                       len(relations), len(pairs))
    return [
        RelationEdge(a=a, b=b, relation=rel)
        for (a, b), rel in zip(pairs, relations)
    ]


def propose_edges_naive(
    graph: SceneGraph,
    new_node_ids: Sequence[int],
    llm: LlmBackend,
) -> list[RelationEdge]:
    """Per-pair querying baseline: one prompt for every pair. Kept for the
    efficiency comparison; the agent always uses the batched path."""
    edges = []
    for a, b in enumerate_pairs(graph, new_node_ids):
        cat_a, cat_b = graph.objects[a].category, graph.objects[b].category
        request = CompletionRequest(
            prompt=prompts.render_edge_prompt([(cat_a, cat_b)]),
            request_id=f"edge-{a}-{b}",
            metadata={
                "kind": "edge_proposal",
                "pairs": [{
                    "a": a, "b": b,
                    "a_position": graph.objects[a].position,
                    "b_position": graph.objects[b].position,
                    "a_category": cat_a, "b_category": cat_b,
                }],
            },
        )
        response = llm.complete(request)
        try:
            parsed = parse_structured(response, "relations")
        except ResponseParseError:
            continue
        if parsed:
            edges.append(RelationEdge(a=a, b=b, relation=parsed[0]))
    return edges


def classify_edge_range(edge: RelationEdge, covisibility: CovisibilityLog) -> str:
    """Short iff both endpoints ever appeared in one frame; history counts."""
    for nid in (edge.a, edge.b):
        if not covisibility.knows(nid):
            raise UnknownNodeError(nid)
    frame = covisibility.frame_for(edge.a, edge.b)
    if frame is not None:
        edge.range_class = SHORT
        edge.frame_ref = frame
    else:
        edge.range_class = LONG
    return edge.range_class


def prune_short_edge(edge: RelationEdge, graph: SceneGraph, vlm: Optional[VlmBackend]) -> bool:
    """Keep a short edge iff the vision backend affirms the relation in the
    co-visibility frame. An unavailable backend keeps the edge, flagged."""
    assert edge.range_class == SHORT and edge.frame_ref is not None
    node_a, node_b = graph.objects[edge.a], graph.objects[edge.b]
    try:
        if vlm is None:
            raise ProviderUnavailableError("no vision backend")
        affirmed = vlm.verify_relation(
            edge.frame_ref,
            node_a.category,
            node_b.category,
            node_a.position,
            node_b.position,
            edge.relation,
        )
    except (ProviderUnavailableError, ScriptMismatchError) as err:
        logger.warning("vision backend unavailable (%s); keeping edge unverified", err)
        edge.flagged = True
        edge.verified = False
        return True
    edge.verified = bool(affirmed)
    return bool(affirmed)


def _angle_to_segment(p0: tuple[float, float], p1: tuple[float, float],
                      seg: tuple[float, float, float, float]) -> float:
    """Acute angle in degrees between a line and a wall segment."""
    a1 = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    a2 = math.atan2(seg[3] - seg[1], seg[2] - seg[0])
    diff = abs(a1 - a2) % math.pi
    return math.degrees(min(diff, math.pi - diff))


def _point_segment_distance(px: float, py: float,
                            seg: tuple[float, float, float, float]) -> float:
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    norm = dx * dx + dy * dy
    if norm < 1e-12:
        return math.hypot(px - x0, py - y0)
    t = max(0.0, min(1.0, ((px - x0) * dx + (py - y0) * dy) / norm))
    return math.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def prune_long_edge(edge: RelationEdge, graph: SceneGraph, grid: OccupancyGrid,
                    parallel_tol_deg: Optional[float] = None) -> bool:
    """Keep a long edge iff the endpoints share a room, the connecting BEV
    segment is unobstructed, and it runs parallel to the room's nearest wall."""
    assert edge.range_class == LONG
    if parallel_tol_deg is None:
        parallel_tol_deg = graph.config.parallel_tol_deg
    room_a = graph.room_of(edge.a)
    room_b = graph.room_of(edge.b)
    if room_a is None or room_b is None or room_a != room_b:
        edge.verified = False
        return False
    pa = graph.objects[edge.a].position
    pb = graph.objects[edge.b].position
    c = grid.config
    if gridops.segment_blocked(grid.cells, pa[0], pa[1], pb[0], pb[1],
                               c.origin_x, c.origin_y, c.resolution):
        edge.verified = False
        return False
    walls = graph.rooms[room_a].wall_segments
    if walls:
        mid = ((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2)
        nearest = min(walls, key=lambda s: _point_segment_distance(mid[0], mid[1], s))
        if _angle_to_segment(pa, pb, nearest) > parallel_tol_deg:
            edge.verified = False
            return False
    edge.verified = True
    return True


def decompose_subgraphs(
    graph: SceneGraph,
    include_rooms: bool = True,
    include_groups: bool = True,
    edge_filter: str = "all",
) -> list[Subgraph]:
    """One subgraph per object node: the node, its group and room parents,
    and every object connected to it by a surviving relation edge."""
    subgraphs: list[Subgraph] = []
    for oid in sorted(graph.objects):
        node = graph.objects[oid]
        incident = []
        for e in graph.edges_of(oid):
            if edge_filter == "none":
                continue
            if edge_filter in (SHORT, LONG) and e.range_class != edge_filter:
                continue
            incident.append(e)
        connected = sorted({e.a if e.b == oid else e.b for e in incident})
        nodes = [node.category] + [graph.objects[c].category for c in connected]
        edge_strings = [
            f"{graph.objects[e.a].category} {e.relation} {graph.objects[e.b].category}"
            for e in sorted(incident, key=lambda e: e.key)
        ]
        group_id = graph.group_of(oid) if include_groups else None
        if group_id is not None:
            nodes.append(f"group({graph.groups[group_id].label})")
        room_id = graph.room_of(oid) if include_rooms else None
        if room_id is not None:
            room_type = graph.rooms[room_id].room_type
            nodes.append(room_type)
            edge_strings.append(f"{node.category} in {room_type}")
        subgraphs.append(
            Subgraph(
                central_id=oid,
                central_category=node.category,
                central_position=node.position,
                object_ids=[oid] + connected,
                nodes=nodes,
                edges=edge_strings,
                room_id=room_id,
                group_id=group_id,
            )
        )
    return subgraphs
