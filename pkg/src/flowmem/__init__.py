"""Retrieval-grounded network flow classification.

A classification agent consults an append-only library of rules induced
from past misclassifications; an error-analysis agent keeps that library
growing. The package ships deterministic offline substitutes (mock agents,
hash embedder) so the whole closed loop runs and replays without network.
"""

from .config import RunConfig, load_config
from .embedding import CachingEmbedder, FlowEmbedding, HashEmbedder, RemoteEmbedder, hash_embed
from .flows import (
    CANONICAL_FIELDS,
    DatasetSplit,
    FlowRecord,
    LabeledFlow,
    normalize_protocol,
    stratified_split,
    to_canonical_json,
)
from .labels import ClassLabel, ClassSet
from .library import ExperienceLibrary, Hit, LibraryStats, NO_CONTEXT, NoContext, cosine
from .metrics import ConfusionMatrix, MetricsReport, macro_metrics, windowed_curve
from .pipeline import Components, build_components, run_ablation, run_build, run_evaluate
from .rules import RuleText
from .synthetic import synthetic_flows, write_synthetic_csv

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_FIELDS",
    "CachingEmbedder",
    "ClassLabel",
    "ClassSet",
    "Components",
    "ConfusionMatrix",
    "DatasetSplit",
    "ExperienceLibrary",
    "FlowEmbedding",
    "FlowRecord",
    "HashEmbedder",
    "Hit",
    "LabeledFlow",
    "LibraryStats",
    "MetricsReport",
    "NO_CONTEXT",
    "NoContext",
    "RemoteEmbedder",
    "RuleText",
    "RunConfig",
    "build_components",
    "cosine",
    "hash_embed",
    "load_config",
    "macro_metrics",
    "normalize_protocol",
    "run_ablation",
    "run_build",
    "run_evaluate",
    "stratified_split",
    "synthetic_flows",
    "to_canonical_json",
    "windowed_curve",
    "__version__",
]
