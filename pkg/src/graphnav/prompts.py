"""Prompt templates and renderers.

Every template here is part of the package's external contract: golden tests
pin the rendered bytes, and the scripted providers dispatch on the opening
lines. Slots are literal ``{}`` pairs filled in order with JSON-encoded
values, so a rendered prompt is always parseable by eye and by regex.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

EDGE_CONNECTING_TEMPLATE = """\
You are an AI assistant with commonsense and strong ability to infer the spatial relationships in an indoor scene.
You need to provide the possible spatial relationships between several pairs of objects. Relationships include ["next to", "above", "opposite to", "below", "inside", "behind", "in front of", ...].
All the pairs of objects are provided in JSON format, and you should also response in JSON format. Here are 2 examples:
1.
Input:
[{"object1": "chair", "object2": "table"}, {"object1": "monitor", "object2": "desk"}]
Response:
[{"relationships": "next to"}, {"relationships": "above"}]
2.
Input:
[{"object1": "sofa", "object2": "TV"}, {"object1": "plant", "object2": "chair"}]
Response:
[{"relationships": "opposite to"}, {"relationships": "behind"}]
Now you predict these pairs of objects: """

OBJECT_DISTANCE_TEMPLATE = """\
You are an AI assistant with commonsense and strong ability to infer the distance between two objects in an indoor scene.
You need to predict the most likely distance of two objects in a room. You need to answer the distance in meters and give your reason. Here is the JSON format:
Input:
{"object1": "table", "object2": "chair"}
Response:
{"distance": 0.5, "reason": "Because there is always a chair next to the table."}
Now predict the distance and give your reason: """

ASK_QUESTION_TEMPLATE = """\
You are an AI assistant with commonsense and strong ability to infer the spatial relationships in an indoor scene.
But you have insufficient information. You need to ask a question about the spatial relationship between the object and the goal in the following JSON format:
Input:
{"object": "sofa", "goal": "TV"}
Response:
{"question": "Is there a table next to the sofa?"}
Now ask question: """

ANSWER_QUESTION_TEMPLATE = """\
You are an AI assistant with commonsense and strong ability to answer question about the objects in an indoor scene.
Given a graph scene of the scene, you need to answer the question in the following JSON format:
Input:
{"subgraph": {"nodes": ["sofa", "table", ...], "edges": ["sofa next to table", ...]}, "question": "Is there a table next to the sofa?"}
Response:
{"answer": "Yes"}
Now answer question: """

SUBGRAPH_DISTANCE_TEMPLATE = """\
You are an AI assistant with commonsense and strong ability to infer the distance between a subgraph and a goal in an indoor scene.
You need to predict the most likely distance of a subgraph and a goal in a room. You need to answer the distance in meters and give your reason. Here is the JSON format:
Input:
{"subgraph": {"nodes": ["sofa", "table", ...], "edges": ["sofa next to table", ...]}, "goal": "TV"}
Response:
{"distance": 2, "reason": "Because TV and sofa are on both sides of table."}
Now predict the distance and give your reason: """

FLAT_TEXT_DISTANCE_TEMPLATE = """\
You are an AI assistant with commonsense and strong ability to infer where objects are in an indoor scene.
Given a plain-text description of part of the scene, predict the most likely distance in meters between that part of the scene and the goal, and give your reason, in the following JSON format:
Response:
{"distance": 2, "reason": "..."}
Scene: """

SUMMARY_TEMPLATE = """\
You are an AI assistant helping a robot explain its exploration decisions.
Summarize in one or two sentences why the selected direction is promising, based on the following analyses of nearby scene regions:
"""


def _dump(value) -> str:
    """JSON encoding matching the in-template examples (space after ',' and ':')."""
    return json.dumps(value, separators=(", ", ": "))


def render_pair_list(pairs: Sequence[tuple[str, str]]) -> str:
    return _dump([{"object1": a, "object2": b} for a, b in pairs])


def render_edge_prompt(pairs: Sequence[tuple[str, str]]) -> str:
    return EDGE_CONNECTING_TEMPLATE + render_pair_list(pairs)


def render_object_distance_prompt(obj: str, goal: str) -> str:
    return OBJECT_DISTANCE_TEMPLATE + _dump({"object1": obj, "object2": goal})


def render_ask_question_prompt(obj: str, goal: str) -> str:
    return ASK_QUESTION_TEMPLATE + _dump({"object": obj, "goal": goal})


def subgraph_payload(nodes: Iterable[str], edges: Iterable[str]) -> dict:
    return {"nodes": list(nodes), "edges": list(edges)}


def render_answer_question_prompt(subgraph: dict, question: str) -> str:
    return ANSWER_QUESTION_TEMPLATE + _dump({"subgraph": subgraph, "question": question})


def render_subgraph_distance_prompt(subgraph: dict, goal: str) -> str:
    return SUBGRAPH_DISTANCE_TEMPLATE + _dump({"subgraph": subgraph, "goal": goal})


def render_flat_text_prompt(description: str, goal: str) -> str:
    return FLAT_TEXT_DISTANCE_TEMPLATE + _dump({"scene": description, "goal": goal})


def render_summary_prompt(reasons: Sequence[str]) -> str:
    body = "\n".join(f"- {r}" for r in reasons)
    return SUMMARY_TEMPLATE + body
