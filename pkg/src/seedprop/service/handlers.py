"""Service operations behind the HTTP routes.

Each handler is a plain request-model -> response-model function, so the CLI
can call them in-process with the exact payloads a remote client would post.
"""

from __future__ import annotations

from .. import pipeline
from . import schemas


def ground(req: schemas.GroundRequest) -> schemas.GroundResponse:
    config = req.config.to_pipeline_config(output_dir=req.output_dir)
    result = pipeline.run_ground(
        req.bundles,
        concepts=req.concepts,
        config=config,
        output_dir=req.output_dir,
        dump_graph=req.dump_graph,
    )
    return schemas.GroundResponse(**result)


def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
    report = pipeline.run_eval(req.results_dir, req.annotations_dir, output=req.output)
    return schemas.EvalResponse(report=report)


def stats(req: schemas.StatsRequest) -> schemas.StatsResponse:
    result = pipeline.run_stats(
        req.bundle,
        kind=req.kind,
        dataset_dir=req.dataset_dir,
        layer_set=req.layer_set,
        metric=req.metric,
        affinity_kind=req.affinity_kind,
        gate_quantile=req.gate_quantile,
        output=req.output,
    )
    return schemas.StatsResponse(stats=result)


def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    config = req.config.to_pipeline_config()
    result = pipeline.run_sweep(
        req.dataset_dir,
        steps=req.steps,
        layer_sets=req.layer_sets,
        config=config,
        output=req.output,
    )
    return schemas.SweepResponse(rows=result["rows"])


def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    result = pipeline.run_synth(
        req.count,
        req.seed,
        req.output_dir,
        grid_side=req.grid_side,
        pixel_scale=req.pixel_scale,
    )
    return schemas.SynthResponse(**result)


def validate(req: schemas.ValidateRequest) -> schemas.ValidateResponse:
    result = pipeline.run_validate(req.bundles)
    return schemas.ValidateResponse(ok=result["ok"], bundles=result["bundles"])
