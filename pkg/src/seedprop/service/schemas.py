"""Pydantic request/response models for the grounding service."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field

from ..config import PipelineConfig


class ConfigModel(BaseModel):
    """Wire form of PipelineConfig; paths stay on the service side."""

    anchor_layer_set: Union[Literal["all"], list[int]] = "all"
    graph_layer_set: Union[str, list[int]] = "auto"
    gate_quantile: float = 0.98
    n_steps: int = 160
    threads: int = 1
    variant: Literal["full", "anchor_only", "no_gate", "no_cos"] = "full"
    include_diagonal: bool = True
    snapshot_every: int = 0

    def to_pipeline_config(self, output_dir: Optional[str] = None) -> PipelineConfig:
        raw = self.model_dump()
        for key in ("anchor_layer_set", "graph_layer_set"):
            if isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        return PipelineConfig(output_dir=output_dir, **raw)


class GroundRequest(BaseModel):
    bundles: list[str] = Field(min_length=1)
    concepts: Optional[list[str]] = None
    config: ConfigModel = ConfigModel()
    output_dir: str
    dump_graph: bool = False


class GroundResponse(BaseModel):
    report: dict
    output_dir: str
    written: list[str]


class EvalRequest(BaseModel):
    results_dir: str
    annotations_dir: str
    output: Optional[str] = None


class EvalResponse(BaseModel):
    report: dict


class StatsRequest(BaseModel):
    bundle: str
    kind: Literal["locality", "affinity"]
    dataset_dir: Optional[str] = None
    layer_set: Union[Literal["all"], list[int]] = "all"
    metric: Literal["chebyshev", "euclidean"] = "chebyshev"
    affinity_kind: Literal["w_attn", "w_cos", "gated"] = "gated"
    gate_quantile: float = 0.98
    output: Optional[str] = None


class StatsResponse(BaseModel):
    stats: dict


class SweepRequest(BaseModel):
    dataset_dir: str
    steps: Optional[list[int]] = None
    layer_sets: Optional[list[list[int]]] = None
    config: ConfigModel = ConfigModel()
    output: Optional[str] = None


class SweepResponse(BaseModel):
    rows: list[dict]


class SynthRequest(BaseModel):
    count: int = Field(ge=1)
    seed: int = 7
    output_dir: str
    grid_side: int = 32
    pixel_scale: int = 16


class SynthResponse(BaseModel):
    output_dir: str
    scene_count: int
    seed: int


class ValidateRequest(BaseModel):
    bundles: list[str] = Field(min_length=1)


class ValidateResponse(BaseModel):
    ok: bool
    bundles: list[dict]


class HealthResponse(BaseModel):
    status: str
    version: str
