"""Unified robust training: enrichment, input and label stances, and loss aggregation in one pipeline."""

from .aggregate import AggSpec, agg
from .data import Dataset, gen_blobs, gen_preferences, gen_two_moons
from .hpo import SearchSpace, TrialRecord, run_trial, search
from .metrics import EvalReport
from .pipeline import PRESETS, RobustSpec, preset, train
from .shapley import CoalitionGame, interaction_indices, shapley_values

__version__ = "0.1.0"

__all__ = [
    "AggSpec",
    "CoalitionGame",
    "Dataset",
    "EvalReport",
    "PRESETS",
    "RobustSpec",
    "SearchSpace",
    "TrialRecord",
    "agg",
    "gen_blobs",
    "gen_preferences",
    "gen_two_moons",
    "interaction_indices",
    "preset",
    "run_trial",
    "search",
    "shapley_values",
    "train",
]
