"""Zero-shot object-goal navigation on a deterministic synthetic simulator.

An online hierarchical scene graph scores exploration frontiers through a
staged language-model prompt pipeline; detected goal candidates pass a
credibility-accumulation test before the agent commits.
"""

from .agent import run_benchmark, run_episode
from .config import AblationFlags, EpisodeConfig, SceneParams
from .metrics import BenchmarkReport, EpisodeResult, compute_soft_spl, compute_spl
from .simulator import Scene, Simulator, generate_scene

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "BenchmarkReport",
    "EpisodeConfig",
    "EpisodeResult",
    "Scene",
    "SceneParams",
    "Simulator",
    "compute_soft_spl",
    "compute_spl",
    "generate_scene",
    "run_benchmark",
    "run_episode",
    "__version__",
]
