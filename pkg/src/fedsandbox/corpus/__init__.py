"""Synthetic corpora with exact gold spans, and prediction perturbations."""

from .generator import CorpusConfig, CorpusConfigError, category_table, format_category_table, generate_corpus
from .perturb import PerturbMode, affected_count, perturb_predictions
from .rng import SplitMix64

__all__ = [
    "CorpusConfig",
    "CorpusConfigError",
    "PerturbMode",
    "SplitMix64",
    "affected_count",
    "category_table",
    "format_category_table",
    "generate_corpus",
    "perturb_predictions",
]
