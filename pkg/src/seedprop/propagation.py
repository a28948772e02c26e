"""One-hot seed propagation over the hybrid graph, plus heatmap extraction.

The recurrence is s <- W^T s with W row-normalized: each token distributes
its current mass along its outgoing normalized weights.  No renormalization
happens between steps; a single minmax at the end maps the response to [0, 1].
The propagation vector is float64 throughout because 160 sparse products
compound rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchor import Anchor, select_anchor
from .bundle import AttentionBundle, GridShape, aggregate_layers
from .config import PipelineConfig, resolve_anchor_layers, resolve_graph_layers
from .errors import ValidationError
from .graph import GateParams, HybridGraph, build_hybrid_graph


@dataclass
class HeatMap:
    """Per-token response in [0, 1] on the latent grid.

    After minmax normalization min(values) == 0 and max(values) == 1 exactly,
    unless the raw response was constant; then values are all zero and the
    degenerate flag is set.
    """

    values: np.ndarray
    grid: GridShape
    steps_used: int
    degenerate: bool = False

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.grid.h_tokens, self.grid.w_tokens)


@dataclass
class BinaryMask:
    bits: np.ndarray
    threshold_used: float
    grid: GridShape

    def as_grid(self) -> np.ndarray:
        return self.bits.reshape(self.grid.h_tokens, self.grid.w_tokens)


def propagate(
    graph: HybridGraph,
    seed_token: int,
    n_steps: int,
    snapshot_every: int = 0,
    on_snapshot=None,
) -> np.ndarray:
    """Run n_steps of s <- W^T s from a one-hot seed; returns the raw response.

    snapshot_every > 0 invokes on_snapshot(step, s) every that-many steps,
    used for optional PGM sequence dumps.
    """
    if not 0 <= seed_token < graph.n:
        raise ValidationError(f"seed token {seed_token} out of range for n={graph.n}")
    if n_steps < 0:
        raise ValidationError("n_steps must be >= 0")
    s = np.zeros(graph.n, dtype=np.float64)
    s[seed_token] = 1.0
    wt = graph.transpose_operator
    for step in range(1, n_steps + 1):
        s = wt @ s
        if snapshot_every > 0 and on_snapshot is not None and step % snapshot_every == 0:
            on_snapshot(step, s)
    return s


def propagate_checkpoints(
    graph: HybridGraph, seed_token: int, checkpoints
) -> dict[int, np.ndarray]:
    """One pass to max(checkpoints), recording s at each requested step count.

    Shares the trajectory prefix, so checkpoint k equals propagate(.., k)
    exactly.
    """
    wanted = sorted(set(int(c) for c in checkpoints))
    if not wanted:
        raise ValidationError("checkpoints must be non-empty")
    if wanted[0] < 0:
        raise ValidationError("checkpoints must be >= 0")
    if not 0 <= seed_token < graph.n:
        raise ValidationError(f"seed token {seed_token} out of range for n={graph.n}")
    s = np.zeros(graph.n, dtype=np.float64)
    s[seed_token] = 1.0
    out: dict[int, np.ndarray] = {}
    wanted_set = set(wanted)
    if 0 in wanted_set:
        out[0] = s.copy()
    wt = graph.transpose_operator
    for step in range(1, wanted[-1] + 1):
        s = wt @ s
        if step in wanted_set:
            out[step] = s.copy()
    return {k: out[k] for k in wanted}


def normalize_minmax(raw: np.ndarray, grid: GridShape, steps_used: int) -> HeatMap:
    """(x - min) / (max - min); a constant input yields all zeros, flagged."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise ValidationError("heatmap normalization requires finite values")
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        return HeatMap(
            values=np.zeros_like(raw), grid=grid, steps_used=steps_used, degenerate=True
        )
    return HeatMap(values=(raw - lo) / (hi - lo), grid=grid, steps_used=steps_used)


def binarize_mean(hm: HeatMap) -> BinaryMask:
    """Threshold at the arithmetic mean over all tokens, strictly above."""
    threshold = float(hm.values.mean())
    return BinaryMask(bits=hm.values > threshold, threshold_used=threshold, grid=hm.grid)


@dataclass
class ConceptGrounding:
    concept: str
    anchor: Anchor
    heatmap: HeatMap
    mask: BinaryMask


@dataclass
class SceneGrounding:
    """Grounding of several concepts over one bundle, sharing one graph."""

    grid: GridShape
    tau_w: float
    gate_density: float
    graph_layers: list[int]
    anchor_layers: list[int]
    results: list[ConceptGrounding]
    graph: HybridGraph | None = None


def anchor_matrix(bundle: AttentionBundle, config: PipelineConfig) -> np.ndarray:
    """Concept-to-image rows averaged over the configured anchor layer set."""
    anchor_layers = resolve_anchor_layers(config, bundle)
    unknown = set(anchor_layers) - set(bundle.layers)
    if unknown:
        raise ValidationError(f"anchor layers not in bundle: {sorted(unknown)}")
    return np.mean(
        np.stack([bundle.a_ci[l] for l in sorted(set(anchor_layers))]).astype(np.float64),
        axis=0,
    )


def build_scene_graph(bundle: AttentionBundle, config: PipelineConfig) -> HybridGraph | None:
    """Graph for one bundle per the configured variant; None for anchor_only."""
    if config.variant == "anchor_only":
        return None
    layers = resolve_graph_layers(config, bundle)
    signals = aggregate_layers(bundle, layers)
    params = GateParams(quantile=config.gate_quantile, include_diagonal=config.include_diagonal)
    return build_hybrid_graph(
        signals,
        params=params,
        n_workers=config.threads,
        use_gate=config.variant != "no_gate",
        use_cos_weights=config.variant != "no_cos",
    )


def ground_scene(
    bundle: AttentionBundle,
    concepts=None,
    config: PipelineConfig = PipelineConfig(),
    on_snapshot=None,
) -> SceneGrounding:
    """Ground each requested concept of one bundle over a shared graph."""
    names = list(bundle.concepts) if concepts is None else list(concepts)
    indices = [bundle.concept_index(c) for c in names]

    a_ci_mean = anchor_matrix(bundle, config)
    graph = build_scene_graph(bundle, config)
    graph_layers = [] if graph is None else resolve_graph_layers(config, bundle)

    anchor_layers = resolve_anchor_layers(config, bundle)
    results = []
    for name, k in zip(names, indices):
        anchor = select_anchor(a_ci_mean, k)
        if graph is None:
            heat = normalize_minmax(a_ci_mean[k], bundle.grid, steps_used=0)
        else:
            cb = None
            if on_snapshot is not None:
                cb = lambda step, s, _name=name: on_snapshot(_name, step, s)
            raw = propagate(
                graph,
                anchor.token_index,
                config.n_steps,
                snapshot_every=config.snapshot_every,
                on_snapshot=cb,
            )
            heat = normalize_minmax(raw, bundle.grid, steps_used=config.n_steps)
        mask = binarize_mean(heat)
        results.append(ConceptGrounding(concept=name, anchor=anchor, heatmap=heat, mask=mask))

    return SceneGrounding(
        grid=bundle.grid,
        tau_w=float("nan") if graph is None else graph.tau_w,
        gate_density=0.0 if graph is None else graph.gate_density,
        graph_layers=graph_layers,
        anchor_layers=sorted(set(anchor_layers)),
        results=results,
        graph=graph,
    )


def ground(
    bundle: AttentionBundle, concept_index: int, config: PipelineConfig = PipelineConfig()
) -> tuple[Anchor, HeatMap, BinaryMask]:
    """Single-concept grounding: anchor, normalized heatmap, mean-threshold mask."""
    if not 0 <= concept_index < bundle.n_concepts:
        raise ValidationError(
            f"concept index {concept_index} out of range for K={bundle.n_concepts}"
        )
    scene = ground_scene(bundle, [bundle.concepts[concept_index]], config)
    r = scene.results[0]
    return r.anchor, r.heatmap, r.mask
