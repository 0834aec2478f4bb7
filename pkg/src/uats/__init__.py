"""Uncertainty-aware tree search over a synthetic reasoning environment."""

from .env import ConfigError, EnvConfig, EpisodeOutcome, Node
from .rng import RNG_VERSION, StreamRng, stream_for
from .scorer import ScoreStats, ScorerBackend, draw_scores, merge_stats, summarize
from .search import BudgetLedger, SearchParams, run_baseline, run_tree_episode

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EnvConfig",
    "EpisodeOutcome",
    "Node",
    "RNG_VERSION",
    "StreamRng",
    "stream_for",
    "ScoreStats",
    "ScorerBackend",
    "draw_scores",
    "merge_stats",
    "summarize",
    "BudgetLedger",
    "SearchParams",
    "run_baseline",
    "run_tree_episode",
    "__version__",
]
