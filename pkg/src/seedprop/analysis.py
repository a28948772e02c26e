"""Diagnostic statistics and ablation sweeps.

Covers the attention-locality profile over patch-distance bins, affinity
means split by same-object / confusable-different / foreground-background
pair categories, and the step-count and layer-set sweeps that drive the
ablation tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse as sp

from .anchor import select_anchor
from .bundle import GridShape
from .config import PipelineConfig
from .errors import ValidationError
from .metrics import PairInput, SceneAnnotation, evaluate_dataset
from .propagation import (
    anchor_matrix,
    binarize_mean,
    build_scene_graph,
    ground_scene,
    normalize_minmax,
    propagate_checkpoints,
)

SWEEP_CSV_HEADER = ["config", "miou_fg", "map_fg", "nar", "acc_fg"]
LOCALITY_CSV_HEADER = ["bin_min", "bin_max", "mean_weight"]


@dataclass
class LocalityProfile:
    """Mean attention weight per patch-distance bin.

    Bins are half-open [lo, hi) except the last, which includes its upper
    edge; together they partition [0, max grid distance].
    """

    bins: list[tuple[float, float]]
    mean_weight: list[float]
    pair_count: list[int]
    metric: str


@dataclass
class AffinityStats:
    same_object: float | None
    confusable_diff: float | None
    fg_bg: float | None
    affinity_kind: str
    undefined: list[str] = field(default_factory=list)


def default_distance_bins(grid: GridShape, metric: str = "chebyshev") -> list[tuple[float, float]]:
    if metric == "chebyshev":
        max_d = float(max(grid.h_tokens, grid.w_tokens) - 1)
    else:
        max_d = float(np.hypot(grid.h_tokens - 1, grid.w_tokens - 1))
    edges = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0]
    edges = [e for e in edges if e < max_d] + [max_d]
    return list(zip(edges[:-1], edges[1:]))


def _pair_distances(grid: GridShape, metric: str) -> np.ndarray:
    n = grid.n_tokens
    rows = np.arange(n) // grid.w_tokens
    cols = np.arange(n) % grid.w_tokens
    dr = np.abs(rows[:, None] - rows[None, :])
    dc = np.abs(cols[:, None] - cols[None, :])
    if metric == "chebyshev":
        return np.maximum(dr, dc).astype(np.float64)
    if metric == "euclidean":
        return np.hypot(dr, dc)
    raise ValidationError(f"unknown distance metric {metric!r}")


def locality_profile(
    a_ii_mean: np.ndarray,
    grid: GridShape,
    bins=None,
    metric: str = "chebyshev",
) -> LocalityProfile:
    """Per-bin mean of attention weights over ordered token pairs."""
    a = np.asarray(a_ii_mean, dtype=np.float64)
    n = grid.n_tokens
    if a.shape != (n, n):
        raise ValidationError(f"attention shape {a.shape} does not match grid n={n}")
    if bins is None:
        bins = default_distance_bins(grid, metric)
    bins = [(float(lo), float(hi)) for lo, hi in bins]
    if not bins or bins[0][0] != 0.0:
        raise ValidationError("bins must start at distance 0")
    for (lo, hi), (lo2, _) in zip(bins, bins[1:]):
        if hi != lo2 or hi <= lo:
            raise ValidationError("bins must be increasing and contiguous")
    d = _pair_distances(grid, metric)
    means, counts = [], []
    last = len(bins) - 1
    for b, (lo, hi) in enumerate(bins):
        if b == last:
            sel = (d >= lo) & (d <= hi)
        else:
            sel = (d >= lo) & (d < hi)
        cnt = int(sel.sum())
        means.append(float(a[sel].mean()) if cnt else 0.0)
        counts.append(cnt)
    return LocalityProfile(bins=bins, mean_weight=means, pair_count=counts, metric=metric)


def project_masks_to_tokens(annotation: SceneAnnotation, grid: GridShape) -> dict[str, np.ndarray]:
    """Majority rule: a token belongs to a concept if >50% of its patch pixels do."""
    out = {}
    ph, pw = annotation.pixel_h, annotation.pixel_w
    if ph % grid.h_tokens or pw % grid.w_tokens:
        raise ValidationError(
            f"pixel dims ({ph}, {pw}) not divisible by grid "
            f"({grid.h_tokens}, {grid.w_tokens})"
        )
    sh, sw = ph // grid.h_tokens, pw // grid.w_tokens
    for concept, mask in annotation.masks.items():
        m = mask.astype(np.float64).reshape(grid.h_tokens, sh, grid.w_tokens, sw)
        frac = m.mean(axis=(1, 3))
        out[concept] = (frac > 0.5).ravel()
    return out


def affinity_stats(affinity, token_masks: dict[str, np.ndarray], affinity_kind: str) -> AffinityStats:
    """Mean affinity (x100) per pair category over ordered pairs, i != j.

    Categories: both tokens inside one concept's mask; tokens in two different
    concepts' masks; one token in a mask and one in the background.  A
    category with zero pairs is reported as undefined.
    """
    if sp.issparse(affinity):
        a = np.asarray(affinity.todense(), dtype=np.float64)
    else:
        a = np.asarray(affinity, dtype=np.float64)
    n = a.shape[0]
    masks = [np.asarray(m, dtype=bool) for m in token_masks.values()]
    if not masks:
        raise ValidationError("affinity_stats needs at least one concept mask")
    for m in masks:
        if m.shape != (n,):
            raise ValidationError(f"token mask shape {m.shape} does not match n={n}")
    fg = np.zeros(n, dtype=bool)
    same = np.zeros((n, n), dtype=bool)
    for m in masks:
        fg |= m
        same |= m[:, None] & m[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    same &= off_diag
    conf = fg[:, None] & fg[None, :] & ~same & off_diag
    bg = ~fg
    fgbg = (fg[:, None] & bg[None, :]) | (bg[:, None] & fg[None, :])

    values, undefined = {}, []
    for name, sel in (("same_object", same), ("confusable_diff", conf), ("fg_bg", fgbg)):
        cnt = int(sel.sum())
        if cnt == 0:
            values[name] = None
            undefined.append(name)
        else:
            values[name] = float(a[sel].mean()) * 100.0
    return AffinityStats(
        same_object=values["same_object"],
        confusable_diff=values["confusable_diff"],
        fg_bg=values["fg_bg"],
        affinity_kind=affinity_kind,
        undefined=undefined,
    )


def _evaluate_scenes(scenes, config: PipelineConfig) -> dict:
    pairs = []
    for bundle, annotation in scenes:
        scene = ground_scene(bundle, None, config)
        for r in scene.results:
            pairs.append(PairInput(r.heatmap, r.mask, r.anchor, annotation, r.concept))
    rep = evaluate_dataset(pairs)
    return {
        "miou_fg": rep.miou_fg,
        "map_fg": rep.map_fg,
        "nar": rep.nar,
        "acc_fg": rep.acc_fg,
    }


def sweep_steps(scenes, steps, config: PipelineConfig = PipelineConfig()) -> list[dict]:
    """One row of fg metrics per propagation step count.

    The graph and anchor are shared across step counts per scene; the
    propagation prefix is shared too, so row k matches an independent run at
    that step count exactly.
    """
    wanted = sorted(set(int(s) for s in steps))
    if not wanted:
        raise ValidationError("steps must be non-empty")
    per_step_pairs: dict[int, list[PairInput]] = {s: [] for s in wanted}
    for bundle, annotation in scenes:
        a_ci_mean = anchor_matrix(bundle, config)
        graph = build_scene_graph(bundle, config)
        for k, concept in enumerate(bundle.concepts):
            anc = select_anchor(a_ci_mean, k)
            if graph is None:
                heat = normalize_minmax(a_ci_mean[k], bundle.grid, steps_used=0)
                mask = binarize_mean(heat)
                for s in wanted:
                    per_step_pairs[s].append(PairInput(heat, mask, anc, annotation, concept))
                continue
            snapshots = propagate_checkpoints(graph, anc.token_index, wanted)
            for s, raw in snapshots.items():
                heat = normalize_minmax(raw, bundle.grid, steps_used=s)
                mask = binarize_mean(heat)
                per_step_pairs[s].append(PairInput(heat, mask, anc, annotation, concept))
    rows = []
    for s in wanted:
        rep = evaluate_dataset(per_step_pairs[s])
        rows.append(
            {
                "config": str(s),
                "miou_fg": rep.miou_fg,
                "map_fg": rep.map_fg,
                "nar": rep.nar,
                "acc_fg": rep.acc_fg,
            }
        )
    return rows


def sweep_layers(scenes, layer_sets, config: PipelineConfig = PipelineConfig()) -> list[dict]:
    """One row of fg metrics per graph layer set, sorted by miou_fg descending."""
    if not layer_sets:
        raise ValidationError("layer_sets must be non-empty")
    rows = []
    for layer_set in layer_sets:
        layers = tuple(int(l) for l in layer_set)
        cfg = config.with_overrides(graph_layer_set=layers)
        row = _evaluate_scenes(scenes, cfg)
        row = {"config": "+".join(f"L{l}" for l in layers), **row}
        rows.append(row)
    rows.sort(key=lambda r: -r["miou_fg"])
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in SWEEP_CSV_HEADER})


def write_locality_csv(profile: LocalityProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOCALITY_CSV_HEADER)
        for (lo, hi), mean in zip(profile.bins, profile.mean_weight):
            writer.writerow([lo, hi, mean])
