"""Batch orchestration: grounding runs, dataset evaluation, synthesis, stats.

Work is queued over bundles with a bounded thread pool; BLAS pools are pinned
to one thread for the whole batch so results are byte-identical for any
worker count.  When a batch holds a single bundle the configured thread count
goes to the row-blocked graph build instead.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, pgm
from .anchor import Anchor
from .bundle import AttentionBundle, GridShape, aggregate_layers, load_bundle, save_bundle
from .config import PipelineConfig
from .errors import ValidationError
from .graph import GateParams, build_gate, dump_edges, gated_output_affinity, row_similarity
from .metrics import PairInput, SceneAnnotation, evaluate_dataset
from .propagation import BinaryMask, HeatMap, ground_scene
from .synth import standard_suite

REPORT_VERSION = 1

GROUND_REPORT = "ground_report.json"
ANNOTATIONS = "annotations.json"


def image_id_from_path(path) -> str:
    name = Path(path).name
    for suffix in (".zip", ".bundle"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def _nan_to_none(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


# ---------------------------------------------------------------------------
# ground


def _ground_one(bundle_path, concepts, config: PipelineConfig, out: Path, dump_graph: bool):
    bundle = load_bundle(bundle_path)
    image_id = image_id_from_path(bundle_path)
    written: list[str] = []

    on_snapshot = None
    if config.snapshot_every > 0:
        def on_snapshot(concept, step, s):
            lo, hi = float(s.min()), float(s.max())
            unit = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
            name = f"{image_id}__{concept}.step{step:04d}.pgm"
            grid_vals = unit.reshape(bundle.grid.h_tokens, bundle.grid.w_tokens)
            pgm.write_pgm(out / name, pgm.heatmap_to_u8(grid_vals))
            written.append(name)

    scene = ground_scene(bundle, concepts, config, on_snapshot=on_snapshot)

    if dump_graph and scene.graph is not None:
        name = f"{image_id}.edges.txt"
        dump_edges(scene.graph, out / name)
        written.append(name)

    items = []
    for r in scene.results:
        row, col = bundle.grid.token_rc(r.anchor.token_index)
        heat_name = f"{image_id}__{r.concept}.heat.pgm"
        mask_name = f"{image_id}__{r.concept}.mask.pgm"
        pgm.write_pgm(out / heat_name, pgm.heatmap_to_u8(r.heatmap.as_grid()))
        pgm.write_pgm(out / mask_name, pgm.mask_to_u8(r.mask.as_grid()))
        written.extend([heat_name, mask_name])
        flags = []
        if r.heatmap.degenerate:
            flags.append("degenerate_heatmap")
        if r.anchor.tie_count > 1:
            flags.append("anchor_tie")
        items.append(
            {
                "image_id": image_id,
                "bundle": str(bundle_path),
                "concept": r.concept,
                "concept_index": r.anchor.concept_index,
                "anchor": {
                    "concept": r.concept,
                    "token_index": r.anchor.token_index,
                    "row": row,
                    "col": col,
                    "value": r.anchor.response_value,
                },
                "tie_count": r.anchor.tie_count,
                "steps": r.heatmap.steps_used,
                "threshold": r.mask.threshold_used,
                "tau_w": _nan_to_none(scene.tau_w),
                "gate_density": scene.gate_density,
                "graph_layers": scene.graph_layers,
                "anchor_layers": scene.anchor_layers,
                "grid": {"h": bundle.grid.h_tokens, "w": bundle.grid.w_tokens},
                "degenerate_flags": flags,
                "heat_pgm": heat_name,
                "mask_pgm": mask_name,
            }
        )
    return items, written


def run_ground(
    bundle_paths,
    concepts=None,
    config: PipelineConfig = PipelineConfig(),
    output_dir=None,
    dump_graph: bool = False,
) -> dict:
    """Ground every (bundle, concept) pair, writing PGMs plus a JSON report."""
    paths = [Path(p) for p in bundle_paths]
    if not paths:
        raise ValidationError("no bundle paths given")
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"bundle not found: {p}")
    ids = [image_id_from_path(p) for p in paths]
    if len(set(ids)) != len(ids):
        raise ValidationError("bundle paths produce duplicate image ids")
    out = Path(output_dir if output_dir is not None else config.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)

    # single-bundle batches put the worker budget into the row-blocked graph
    # build; multi-bundle batches parallelize across bundles instead
    if len(paths) == 1:
        job_workers = 1
        job_config = config
    else:
        job_workers = config.threads
        job_config = config.with_overrides(threads=1)

    def job(p):
        return _ground_one(p, concepts, job_config, out, dump_graph)

    with threadpool_limits(limits=1):
        if job_workers > 1:
            with ThreadPoolExecutor(max_workers=job_workers) as pool:
                results = list(pool.map(job, paths))
        else:
            results = [job(p) for p in paths]

    items = [item for batch, _ in results for item in batch]
    written = [name for _, names in results for name in names]
    # threads and output_dir are scheduling/placement knobs that cannot affect
    # results; leaving them out keeps reports byte-identical across --threads
    config_echo = config.to_dict()
    config_echo.pop("threads")
    config_echo.pop("output_dir")
    report = {
        "report_version": REPORT_VERSION,
        "config": config_echo,
        "items": items,
    }
    write_json(report, out / GROUND_REPORT)
    return {"report": report, "output_dir": str(out), "written": sorted(written)}


# ---------------------------------------------------------------------------
# datasets on disk


def write_dataset(scenes, output_dir) -> dict:
    """Write bundles, mask PGMs, and annotations.json for a list of scenes."""
    out = Path(output_dir)
    (out / "bundles").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for scene in scenes:
        bundle, ann = scene.bundle, scene.annotation
        bundle_name = f"bundles/{ann.image_id}.bundle.zip"
        save_bundle(bundle, out / bundle_name)
        mask_files = {}
        for concept, mask in ann.masks.items():
            mask_name = f"masks/{ann.image_id}__{concept}.pgm"
            pgm.write_pgm(out / mask_name, pgm.mask_to_u8(mask))
            mask_files[concept] = mask_name
        records.append(
            {
                "image_id": ann.image_id,
                "pixel_h": ann.pixel_h,
                "pixel_w": ann.pixel_w,
                "masks": mask_files,
                "bundle": bundle_name,
                "retries": scene.retries,
            }
        )
    write_json({"annotations": records}, out / ANNOTATIONS)
    return {"output_dir": str(out), "scene_count": len(records)}


def load_annotations(dataset_dir) -> dict[str, SceneAnnotation]:
    root = Path(dataset_dir)
    path = root / ANNOTATIONS
    if not path.exists():
        raise FileNotFoundError(f"no {ANNOTATIONS} under {root}")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    records = payload["annotations"] if isinstance(payload, dict) else payload
    out = {}
    for rec in records:
        masks = {
            concept: pgm.u8_to_bool(pgm.read_pgm(root / rel))
            for concept, rel in rec["masks"].items()
        }
        ann = SceneAnnotation(
            image_id=rec["image_id"],
            pixel_h=int(rec["pixel_h"]),
            pixel_w=int(rec["pixel_w"]),
            masks=masks,
        )
        out[ann.image_id] = ann
    return out


def load_dataset(dataset_dir) -> list[tuple[AttentionBundle, SceneAnnotation]]:
    """Load (bundle, annotation) pairs from a dataset directory."""
    root = Path(dataset_dir)
    annotations = load_annotations(root)
    with open(root / ANNOTATIONS, encoding="utf-8") as fh:
        records = json.load(fh)["annotations"]
    scenes = []
    for rec in records:
        if "bundle" not in rec:
            raise ValidationError(f"{rec['image_id']}: annotation record lacks a bundle path")
        bundle = load_bundle(root / rec["bundle"])
        scenes.append((bundle, annotations[rec["image_id"]]))
    return scenes


def run_synth(
    count: int,
    seed: int,
    output_dir,
    grid_side: int = 32,
    pixel_scale: int = 16,
) -> dict:
    scenes = standard_suite(count, seed, grid_side=grid_side, pixel_scale=pixel_scale)
    result = write_dataset(scenes, output_dir)
    result["seed"] = seed
    return result


# ---------------------------------------------------------------------------
# eval


def run_eval(results_dir, annotations_dir, output=None) -> dict:
    """Evaluate a grounding results directory against dataset annotations."""
    res = Path(results_dir)
    report_path = res / GROUND_REPORT
    if not report_path.exists():
        raise FileNotFoundError(f"no {GROUND_REPORT} under {res}")
    with open(report_path, encoding="utf-8") as fh:
        ground_report = json.load(fh)
    annotations = load_annotations(annotations_dir)

    unmatched = sorted(
        {item["image_id"] for item in ground_report["items"]} - set(annotations)
    )
    if unmatched:
        raise ValidationError(f"no annotations for image ids: {unmatched}")

    pairs = []
    for item in ground_report["items"]:
        ann = annotations[item["image_id"]]
        grid = GridShape(item["grid"]["h"], item["grid"]["w"])
        heat_u8 = pgm.read_pgm(res / item["heat_pgm"])
        mask_u8 = pgm.read_pgm(res / item["mask_pgm"])
        heatmap = HeatMap(
            values=pgm.u8_to_unit(heat_u8).ravel(),
            grid=grid,
            steps_used=int(item["steps"]),
            degenerate="degenerate_heatmap" in item["degenerate_flags"],
        )
        mask = BinaryMask(
            bits=pgm.u8_to_bool(mask_u8).ravel(),
            threshold_used=float(item["threshold"]),
            grid=grid,
        )
        anchor = Anchor(
            concept_index=int(item["concept_index"]),
            token_index=int(item["anchor"]["token_index"]),
            response_value=float(item["anchor"]["value"]),
            tie_count=int(item["tie_count"]),
        )
        pairs.append(PairInput(heatmap, mask, anchor, ann, item["concept"]))

    report = evaluate_dataset(pairs)
    payload = {"report_version": REPORT_VERSION, **report.to_dict()}
    if output is not None:
        write_json(payload, output)
    return payload


# ---------------------------------------------------------------------------
# stats / sweeps


def run_stats(
    bundle_path,
    kind: str,
    dataset_dir=None,
    layer_set="all",
    metric: str = "chebyshev",
    affinity_kind: str = "gated",
    gate_quantile: float = 0.98,
    output=None,
) -> dict:
    bundle = load_bundle(bundle_path)
    layers = list(bundle.layers) if layer_set == "all" else [int(l) for l in layer_set]
    signals = aggregate_layers(bundle, layers)

    if kind == "locality":
        profile = analysis.locality_profile(signals.a_ii_mean, bundle.grid, metric=metric)
        if output is not None:
            analysis.write_locality_csv(profile, output)
        return {
            "kind": "locality",
            "metric": profile.metric,
            "bins": [
                {"bin_min": lo, "bin_max": hi, "mean_weight": mw, "pair_count": pc}
                for (lo, hi), mw, pc in zip(profile.bins, profile.mean_weight, profile.pair_count)
            ],
        }

    if kind == "affinity":
        if dataset_dir is None:
            raise ValidationError("affinity stats need a dataset directory for annotations")
        annotations = load_annotations(dataset_dir)
        image_id = image_id_from_path(bundle_path)
        if image_id not in annotations:
            raise ValidationError(f"no annotation for image id {image_id!r}")
        token_masks = analysis.project_masks_to_tokens(annotations[image_id], bundle.grid)
        if affinity_kind == "w_attn":
            matrix = row_similarity(signals.a_ii_mean)
        elif affinity_kind == "w_cos":
            on = signals.o_ii_mean / np.maximum(
                np.linalg.norm(signals.o_ii_mean, axis=1, keepdims=True), 1e-300
            )
            matrix = on @ on.T
        elif affinity_kind == "gated":
            w_attn = row_similarity(signals.a_ii_mean)
            gate = build_gate(w_attn, GateParams(quantile=gate_quantile))
            matrix = gated_output_affinity(signals.o_ii_mean, gate)
        else:
            raise ValidationError(f"unknown affinity kind {affinity_kind!r}")
        stats = analysis.affinity_stats(matrix, token_masks, affinity_kind)
        payload = {
            "kind": "affinity",
            "affinity_kind": stats.affinity_kind,
            "same_object": stats.same_object,
            "confusable_diff": stats.confusable_diff,
            "fg_bg": stats.fg_bg,
            "undefined": stats.undefined,
        }
        if output is not None:
            write_json(payload, output)
        return payload

    raise ValidationError(f"unknown stats kind {kind!r}")


def run_sweep(
    dataset_dir,
    steps=None,
    layer_sets=None,
    config: PipelineConfig = PipelineConfig(),
    output=None,
) -> dict:
    if (steps is None) == (layer_sets is None):
        raise ValidationError("exactly one of steps / layer_sets must be given")
    scenes = load_dataset(dataset_dir)
    with threadpool_limits(limits=1):
        if steps is not None:
            rows = analysis.sweep_steps(scenes, steps, config)
        else:
            rows = analysis.sweep_layers(scenes, layer_sets, config)
    if output is not None:
        analysis.write_sweep_csv(rows, output)
    return {"report_version": REPORT_VERSION, "rows": rows}


# ---------------------------------------------------------------------------
# validate


def run_validate(bundle_paths) -> dict:
    """Validate each bundle; never raises for malformed bundles."""
    reports = []
    ok_all = True
    for p in bundle_paths:
        try:
            bundle = load_bundle(p)
        except ValidationError as exc:
            ok_all = False
            reports.append({"bundle": str(p), "ok": False, "error": str(exc)})
            continue
        reports.append(
            {
                "bundle": str(p),
                "ok": True,
                "grid": {"h": bundle.grid.h_tokens, "w": bundle.grid.w_tokens},
                "n_tokens": bundle.n_tokens,
                "concepts": bundle.concepts,
                "layers": bundle.layers,
                "d_h": bundle.d_h,
                "model": bundle.meta.model,
            }
        )
    return {"report_version": REPORT_VERSION, "ok": ok_all, "bundles": reports}
