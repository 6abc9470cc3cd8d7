"""Completion providers, structured-response parsing, and the batched-prompt
cost model.

Two concrete providers share one interface: an HTTP chat-completion client
(endpoint and credentials from the environment) and a deterministic scripted
provider used for tests and benchmarks. Reasoning code never branches on the
provider type.
"""

from __future__ import annotations

import fnmatch
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .exceptions import ProviderUnavailableError, ResponseParseError, ScriptMismatchError

ENV_URL = "GRAPHNAV_LLM_URL"
ENV_MODEL = "GRAPHNAV_LLM_MODEL"
ENV_TOKEN = "GRAPHNAV_LLM_TOKEN"

RELATION_VOCABULARY = (
    "next to",
    "above",
    "opposite to",
    "below",
    "inside",
    "behind",
    "in front of",
)
FALLBACK_RELATION = "near"   # catch-all for labels outside the vocabulary


@dataclass
class CompletionRequest:
    """A single completion call.

    ``metadata`` is a simulation-only side channel (e.g. node positions for
    ground-truth oracles); real providers must ignore it.
    """

    prompt: str
    temperature: float = 0.0
    max_tokens: int = 256
    request_id: str = ""
    metadata: dict = field(default_factory=dict)


@dataclass
class TranscriptRecord:
    stage: str
    prompt: str
    response: str
    parse_status: str = "ok"    # ok | retried | fallback | error

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "prompt": self.prompt,
            "response": self.response,
            "parse_status": self.parse_status,
        }


@dataclass
class LlmTranscript:
    """Ordered prompt/response records for one reasoning unit."""

    records: list[TranscriptRecord] = field(default_factory=list)

    def add(self, stage: str, prompt: str, response: str, parse_status: str = "ok") -> None:
        self.records.append(TranscriptRecord(stage, prompt, response, parse_status))

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r.to_dict(), sort_keys=True) for r in self.records)


class LlmBackend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


def complete(request: CompletionRequest, provider: LlmBackend) -> str:
    """Issue one completion through whichever provider is configured."""
    return provider.complete(request)


class ScriptedProvider:
    """Deterministic provider driven by an ordered list of (pattern, response).

    Patterns are glob-style and matched against the incoming prompt in script
    order; a prompt that does not match the next pending pattern raises
    ``ScriptMismatchError`` so tests fail at the first divergence. With
    ``strict_order=False`` the script is treated as a reusable pattern table
    (first match wins, entries are not consumed).
    """

    def __init__(self, script: Sequence[tuple[str, str]], strict_order: bool = True):
        self._script = list(script)
        self._cursor = 0
        self._strict = strict_order
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path | str, strict_order: bool = True) -> "ScriptedProvider":
        entries = json.loads(Path(path).read_text())
        script = [(e["pattern"], e["response"]) for e in entries]
        return cls(script, strict_order=strict_order)

    @staticmethod
    def _matches(pattern: str, prompt: str) -> bool:
        if pattern.startswith("re:"):
            return re.search(pattern[3:], prompt, re.DOTALL) is not None
        return fnmatch.fnmatch(prompt, pattern) or pattern in prompt

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            if self._strict:
                if self._cursor >= len(self._script):
                    raise ScriptMismatchError("script exhausted")
                pattern, response = self._script[self._cursor]
                if not self._matches(pattern, request.prompt):
                    raise ScriptMismatchError(
                        f"prompt does not match pending pattern {pattern!r}: "
                        f"{request.prompt[:80]!r}"
                    )
                self._cursor += 1
                return response
            for pattern, response in self._script:
                if self._matches(pattern, request.prompt):
                    return response
            raise ScriptMismatchError(f"no pattern matches prompt: {request.prompt[:80]!r}")


class HttpProvider:
    """Chat-completion client over HTTP with bounded retry and backoff.

    Configuration comes from arguments or the GRAPHNAV_LLM_URL / _MODEL /
    _TOKEN environment variables. ``transport`` is injectable for tests and
    must behave like ``requests.post``.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        model: Optional[str] = None,
        token: Optional[str] = None,
        max_retries: int = 2,
        backoff_s: float = 0.5,
        timeout_s: float = 30.0,
        transport: Optional[Callable] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(ENV_URL, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "gpt-4")
        self.token = token or os.environ.get(ENV_TOKEN, "")
        if not self.base_url:
            raise ProviderUnavailableError(f"no endpoint configured (set {ENV_URL})")
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        if transport is None:
            import requests

            transport = requests.post
        self._post = transport
        self._sleep = sleeper

    def complete(self, request: CompletionRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._post(url, json=payload, headers=headers, timeout=self.timeout_s)
                status = getattr(resp, "status_code", 500)
                if status >= 400:
                    last_error = ProviderUnavailableError(f"HTTP {status}")
                    continue
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except ProviderUnavailableError as err:
                last_error = err
            except Exception as err:  # network errors, malformed bodies
                last_error = err
        raise ProviderUnavailableError(f"provider failed after {self.max_retries + 1} attempts: {last_error}")


def count_tokens(text: str) -> int:
    """Whitespace token count, the unit of the simulated latency model."""
    return len(text.split())


class TokenLatencyProvider:
    """Wraps a provider and accrues simulated latency proportional to the
    token count of each prompt and response. Used to measure the batched
    versus per-pair querying trade-off without wall-clock noise."""

    def __init__(self, inner: LlmBackend, seconds_per_token: float = 1.0):
        self.inner = inner
        self.seconds_per_token = seconds_per_token
        self.simulated_time = 0.0
        self.prompt_count = 0

    def complete(self, request: CompletionRequest) -> str:
        response = self.inner.complete(request)
        self.prompt_count += 1
        self.simulated_time += self.seconds_per_token * (
            count_tokens(request.prompt) + count_tokens(response)
        )
        return response


# ---------------------------------------------------------------------------
# Structured-response parsing
# ---------------------------------------------------------------------------

SHAPES = ("relations", "distance", "question", "answer")


def _scan_json_values(text: str):
    """Yield every top-level JSON value found anywhere in the text."""
    decoder = json.JSONDecoder()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "[{":
            try:
                value, end = decoder.raw_decode(text, i)
            except ValueError:
                i += 1
                continue
            yield value
            i = end
        else:
            i += 1


def _validate(value, shape: str):
    if shape == "relations":
        if not isinstance(value, list) or not value:
            return None
        out = []
        for entry in value:
            if not isinstance(entry, dict) or "relationships" not in entry:
                return None
            rel = entry["relationships"]
            if not isinstance(rel, str):
                return None
            out.append(rel if rel in RELATION_VOCABULARY else FALLBACK_RELATION)
        return out
    if not isinstance(value, dict):
        return None
    if shape == "distance":
        if "distance" not in value or isinstance(value["distance"], bool):
            return None
        if not isinstance(value["distance"], (int, float)):
            return None
        return {"distance": float(value["distance"]), "reason": str(value.get("reason", ""))}
    if shape == "question":
        q = value.get("question")
        return {"question": q} if isinstance(q, str) else None
    if shape == "answer":
        a = value.get("answer")
        return {"answer": a} if isinstance(a, str) else None
    raise ValueError(f"unknown shape: {shape}")


def parse_structured(response: str, shape: str):
    """Extract the first well-formed value of ``shape`` from a response.

    Tolerates surrounding prose; raises ``ResponseParseError`` when nothing
    in the text validates.
    """
    if shape not in SHAPES:
        raise ValueError(f"unknown shape: {shape}")
    for value in _scan_json_values(response):
        parsed = _validate(value, shape)
        if parsed is not None:
            return parsed
    raise ResponseParseError(f"no {shape} value found in response: {response[:120]!r}")


def render_relations(relations: Sequence[str]) -> str:
    return json.dumps([{"relationships": r} for r in relations], separators=(", ", ": "))


def render_distance(distance: float, reason: str = "") -> str:
    return json.dumps({"distance": distance, "reason": reason}, separators=(", ", ": "))


def render_question(question: str) -> str:
    return json.dumps({"question": question}, separators=(", ", ": "))


def render_answer(answer: str) -> str:
    return json.dumps({"answer": answer}, separators=(", ", ": "))


# ---------------------------------------------------------------------------
# Batched-prompt cost model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Token-cost model for relation proposal over m new and n previous nodes.

    One batched prompt costs ``(L_pro + k*L_res + k*2) ** r`` with
    ``k = m*(m+n)`` pair slots (two extra tokens name each pair), while
    querying every pair separately costs ``k * (L_pro + L_res) ** r``.
    """

    l_pro: int = 1000
    r: float = 2.0
    alpha: float = 0.01      # L_res / L_pro

    def __post_init__(self):
        if not (1.0 < self.r <= 2.0):
            raise ValueError("r must lie in (1, 2]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def l_res(self) -> float:
        return self.alpha * self.l_pro


def pair_slots(m: int, n: int) -> int:
    """Upper-bound pair count m*(m+n) used by the cost model."""
    return m * (m + n)


def estimate_cost(model: CostModel, m: int, n: int) -> tuple[float, float, float]:
    """Return (t_our, t_naive, ratio) for one graph update."""
    if m < 1 or n < 0:
        raise ValueError("need m >= 1, n >= 0")
    k = pair_slots(m, n)
    t_our = (model.l_pro + k * model.l_res + k * 2) ** model.r
    t_naive = k * (model.l_pro + model.l_res) ** model.r
    return t_our, t_naive, t_our / t_naive


def bound_coefficient(m: int, n: int, r: float = 2.0, alpha: float = 0.01) -> float:
    """The analysis coefficient ((m^2 + m*n - 1) * alpha) ** r / m.

    At (m=5, n=100, r=2, alpha=0.01) this evaluates to 5.49 (to two
    decimals), the constant quoted for the ratio bound c/(m+n).
    """
    return ((m * m + m * n - 1) * alpha) ** r / m


def verify_complexity_bound(
    model: CostModel,
    c: float = 5.49,
    m_range: tuple[int, int] = (1, 5),
    n_range: tuple[int, int] = (1, 100),
) -> Optional[tuple[int, int]]:
    """Sweep the (m, n) grid asserting ratio < c/(m+n); None means the bound
    held everywhere, otherwise the first violating point is returned."""
    for m in range(m_range[0], m_range[1] + 1):
        for n in range(n_range[0], n_range[1] + 1):
            _, _, ratio = estimate_cost(model, m, n)
            if not ratio < c / (m + n):
                return (m, n)
    return None
