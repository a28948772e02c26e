"""Semantic grounding from transformer attention tensors.

Selects a peak-response anchor token per queried concept and propagates a
one-hot seed over a gated, row-normalized affinity graph built from image
self-attention, producing heatmaps and binary masks plus the evaluation and
analysis tooling around them.
"""

__version__ = "0.1.0"

from .anchor import Anchor, anchor_hit, select_anchor
from .bundle import (
    AggregatedSignals,
    AttentionBundle,
    BundleMeta,
    GridShape,
    aggregate_layers,
    load_bundle,
    save_bundle,
    validate_bundle,
)
from .config import GRAPH_PRESETS, PipelineConfig
from .errors import InternalError, SeedpropError, ValidationError
from .graph import (
    GateParams,
    HybridGraph,
    build_gate,
    build_hybrid_graph,
    gated_output_affinity,
    normalize_rows,
    percentile_threshold,
    row_similarity,
)
from .metrics import (
    MetricsReport,
    PairInput,
    SceneAnnotation,
    average_precision,
    binary_metrics,
    evaluate_dataset,
    nar,
    upsample_heatmap,
)
from .propagation import (
    BinaryMask,
    HeatMap,
    binarize_mean,
    ground,
    ground_scene,
    normalize_minmax,
    propagate,
    propagate_checkpoints,
)
from .synth import SceneSpec, ObjectSpec, SyntheticScene, generate, standard_suite

__all__ = [
    "Anchor",
    "AggregatedSignals",
    "AttentionBundle",
    "BinaryMask",
    "BundleMeta",
    "GateParams",
    "GridShape",
    "GRAPH_PRESETS",
    "HeatMap",
    "HybridGraph",
    "InternalError",
    "MetricsReport",
    "ObjectSpec",
    "PairInput",
    "PipelineConfig",
    "SceneAnnotation",
    "SceneSpec",
    "SeedpropError",
    "SyntheticScene",
    "ValidationError",
    "aggregate_layers",
    "anchor_hit",
    "average_precision",
    "binarize_mean",
    "binary_metrics",
    "build_gate",
    "build_hybrid_graph",
    "evaluate_dataset",
    "gated_output_affinity",
    "generate",
    "ground",
    "ground_scene",
    "load_bundle",
    "nar",
    "normalize_minmax",
    "normalize_rows",
    "percentile_threshold",
    "propagate",
    "propagate_checkpoints",
    "row_similarity",
    "save_bundle",
    "select_anchor",
    "standard_suite",
    "upsample_heatmap",
    "validate_bundle",
]
