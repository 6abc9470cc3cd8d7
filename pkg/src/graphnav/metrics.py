"""Episode metrics and benchmark aggregation.

SPL divides the shortest feasible path length by the executed path length
(zero on failure); SoftSPL replaces the binary success term with the
fraction of initial goal distance actually covered, crediting progress on
failed episodes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional


def compute_spl(success: bool, path: float, optimal: float) -> float:
    """Success weighted by path length; 1.0 for a success that starts at the
    goal (zero optimal length)."""
    if path < 0 or optimal < 0:
        raise ValueError("lengths must be non-negative")
    if not success:
        return 0.0
    if optimal == 0 or not math.isfinite(optimal):
        return 1.0 if optimal == 0 else 0.0
    return optimal / max(path, optimal)


def compute_soft_spl(d_init: float, d_final: float, path: float, optimal: float) -> float:
    """Progress toward the goal times path efficiency, in [0, 1]."""
    if d_init <= 0 or not math.isfinite(d_init):
        return 0.0
    progress = max(0.0, 1.0 - d_final / d_init) if math.isfinite(d_final) else 0.0
    if optimal <= 0 or not math.isfinite(optimal):
        return 0.0
    return progress * (optimal / max(path, optimal))


@dataclass
class EpisodeResult:
    seed: int
    goal: str
    success: bool
    termination_cause: str
    steps: int
    path_length: float
    optimal_length: float
    spl: float
    soft_spl: float
    final_distance: float
    llm_prompts: int = 0
    explanations: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchmarkReport:
    results: list[EpisodeResult]
    config_fingerprint: str = ""
    failures: int = 0               # episodes that aborted before completing

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.results]

    @property
    def success_rate(self) -> Optional[float]:
        if not self.results:
            return None
        return sum(1 for r in self.results if r.success) / len(self.results)

    @property
    def mean_spl(self) -> Optional[float]:
        if not self.results:
            return None
        return sum(r.spl for r in self.results) / len(self.results)

    @property
    def mean_soft_spl(self) -> Optional[float]:
        if not self.results:
            return None
        return sum(r.soft_spl for r in self.results) / len(self.results)

    def to_dict(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "seeds": self.seeds,
            "failures": self.failures,
            "aggregate": {
                "episodes": len(self.results),
                "success_rate": self.success_rate,
                "mean_spl": self.mean_spl,
                "mean_soft_spl": self.mean_soft_spl,
            },
            "episodes": [
                {k: v for k, v in r.to_dict().items() if k not in ("trace", "explanations")}
                for r in self.results
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Human-readable summary table."""
        header = f"{'seed':>6} {'goal':<16} {'ok':>3} {'steps':>6} {'path':>8} {'opt':>8} {'spl':>6} {'soft':>6}  cause"
        lines = [header, "-" * len(header)]
        for r in self.results:
            lines.append(
                f"{r.seed:>6} {r.goal:<16.16} {('yes' if r.success else 'no'):>3} "
                f"{r.steps:>6} {r.path_length:>8.2f} {r.optimal_length:>8.2f} "
                f"{r.spl:>6.3f} {r.soft_spl:>6.3f}  {r.termination_cause}"
            )
        sr = self.success_rate
        spl = self.mean_spl
        soft = self.mean_soft_spl
        lines.append("-" * len(header))
        if sr is None:
            lines.append("no episodes: aggregates undefined")
        else:
            lines.append(f"SR {sr:.3f} | mean SPL {spl:.3f} | mean SoftSPL {soft:.3f} "
                         f"| {self.failures} aborted")
        return "\n".join(lines)

    def save(self, path: Path | str) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_json())
        tmp.replace(path)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkReport":
        data = json.loads(text)
        results = [
            EpisodeResult(
                seed=e["seed"], goal=e["goal"], success=e["success"],
                termination_cause=e["termination_cause"], steps=e["steps"],
                path_length=e["path_length"], optimal_length=e["optimal_length"],
                spl=e["spl"], soft_spl=e["soft_spl"],
                final_distance=e["final_distance"],
                llm_prompts=e.get("llm_prompts", 0),
                config_fingerprint=e.get("config_fingerprint", ""),
            )
            for e in data["episodes"]
        ]
        return cls(results=results, config_fingerprint=data["config_fingerprint"],
                   failures=data["failures"])


def fingerprint_suite(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]
