"""Pipeline configuration: layer selection, gate quantile, step count."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .bundle import AttentionBundle
from .errors import ValidationError

# Known-good graph layer pairs per backbone.  The two SD3.5 presets reflect
# two defensible choices; neither is canonical, sd35-mid is used by "auto".
GRAPH_PRESETS: dict[str, tuple[int, ...]] = {
    "sd3-default": (9, 18),
    "sd35-mid": (10, 23),
    "sd35-late": (23, 31),
}

VARIANTS = ("full", "anchor_only", "no_gate", "no_cos")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one grounding run.

    anchor_layer_set "all" averages concept attention over every stored layer;
    graph_layer_set accepts an explicit list, a preset name, or "auto" (pick a
    preset by model id, else fall back to all stored layers).  Defaults:
    gate quantile 0.98, 160 propagation steps.
    """

    anchor_layer_set: str | tuple[int, ...] = "all"
    graph_layer_set: str | tuple[int, ...] = "auto"
    gate_quantile: float = 0.98
    n_steps: int = 160
    threads: int = 1
    output_dir: str | None = None
    variant: str = "full"
    include_diagonal: bool = True
    snapshot_every: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 0.0 < self.gate_quantile < 1.0:
            raise ValidationError(f"gate_quantile must be in (0, 1), got {self.gate_quantile}")
        if self.n_steps < 0:
            raise ValidationError("n_steps must be >= 0")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        norm = dict(raw)
        for key in ("anchor_layer_set", "graph_layer_set"):
            if key in norm and isinstance(norm[key], list):
                norm[key] = tuple(int(v) for v in norm[key])
        return cls(**norm)

    def to_dict(self) -> dict:
        d = {
            "anchor_layer_set": self.anchor_layer_set,
            "graph_layer_set": self.graph_layer_set,
            "gate_quantile": self.gate_quantile,
            "n_steps": self.n_steps,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "variant": self.variant,
            "include_diagonal": self.include_diagonal,
            "snapshot_every": self.snapshot_every,
        }
        for key in ("anchor_layer_set", "graph_layer_set"):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)


def _preset_layers(name: str) -> tuple[int, ...]:
    if name not in GRAPH_PRESETS:
        raise ValidationError(
            f"unknown graph layer preset {name!r}, expected one of {sorted(GRAPH_PRESETS)}"
        )
    return GRAPH_PRESETS[name]


def resolve_anchor_layers(config: PipelineConfig, bundle: AttentionBundle) -> list[int]:
    if config.anchor_layer_set == "all":
        return list(bundle.layers)
    if isinstance(config.anchor_layer_set, str):
        raise ValidationError(
            f"anchor_layer_set must be 'all' or a layer list, got {config.anchor_layer_set!r}"
        )
    return [int(l) for l in config.anchor_layer_set]


def resolve_graph_layers(config: PipelineConfig, bundle: AttentionBundle) -> list[int]:
    selector = config.graph_layer_set
    if isinstance(selector, tuple):
        return [int(l) for l in selector]
    if selector == "auto":
        model = bundle.meta.model.lower()
        if "sd3.5" in model or "sd35" in model:
            candidate = GRAPH_PRESETS["sd35-mid"]
        elif "sd3" in model:
            candidate = GRAPH_PRESETS["sd3-default"]
        else:
            candidate = None
        if candidate is not None and set(candidate) <= set(bundle.layers):
            return list(candidate)
        return list(bundle.layers)
    return list(_preset_layers(selector))
