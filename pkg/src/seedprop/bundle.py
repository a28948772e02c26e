"""Attention bundle archives: format definition, load/save, layer aggregation.

A bundle packs the attention signals extracted for one image at one timestep
into a single zip archive with one NPY (v1.0, float32) entry per tensor and a
UTF-8 JSON manifest:

    manifest.json
    a_ci/layer_{l}.npy    concept-to-image attention rows, K x N
    a_ii/layer_{l}.npy    image self-attention, N x N
    o_ii/layer_{l}.npy    self-attention output features, N x d_h

Attention matrices are head-averaged, row-stochastic softmax outputs; heads
are never stored individually.  All tensors are float32 and round-trip
bit-exactly through save/load.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

FORMAT_VERSION = 1

# float32 softmax rows exported from mixed-precision inference drift well
# beyond 1e-6; 1e-3 accepts that drift while still catching broken exports.
ROW_SUM_TOL = 1e-3

# small headroom over 1.0 for float32 rounding of softmax outputs
_RANGE_EPS = 1e-6

TRAJECTORIES = ("generation", "inversion")


@dataclass(frozen=True)
class GridShape:
    """Token grid of the latent image: h_tokens x w_tokens patches."""

    h_tokens: int
    w_tokens: int

    def __post_init__(self):
        if self.h_tokens < 2 or self.w_tokens < 2:
            raise ValidationError(
                f"grid must be at least 2x2, got {self.h_tokens}x{self.w_tokens}"
            )

    @property
    def n_tokens(self) -> int:
        return self.h_tokens * self.w_tokens

    def token_rc(self, token: int) -> tuple[int, int]:
        """(row, col) of a flat row-major token index."""
        return divmod(int(token), self.w_tokens)


@dataclass(frozen=True)
class BundleMeta:
    model: str = "unknown"
    timestep: int = 0
    trajectory: str = "generation"
    prompt: str = ""

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ValidationError(
                f"trajectory must be one of {TRAJECTORIES}, got {self.trajectory!r}"
            )


@dataclass
class AttentionBundle:
    """Per-layer attention signals for one image/timestep.

    a_ci[l] is K x N, a_ii[l] is N x N, o_ii[l] is N x d_h; the first two are
    row-stochastic.  Bundles are immutable after load and safe to share
    read-only across threads.
    """

    grid: GridShape
    concepts: list[str]
    layers: list[int]
    a_ci: dict[int, np.ndarray]
    a_ii: dict[int, np.ndarray]
    o_ii: dict[int, np.ndarray]
    d_h: int
    meta: BundleMeta = field(default_factory=BundleMeta)

    @property
    def n_tokens(self) -> int:
        return self.grid.n_tokens

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    def concept_index(self, concept: str) -> int:
        try:
            return self.concepts.index(concept)
        except ValueError:
            raise ValidationError(f"concept not in bundle: {concept!r}") from None


@dataclass
class AggregatedSignals:
    """Arithmetic mean of per-layer tensors over a chosen layer set.

    The mean of row-stochastic matrices is row-stochastic, so a_ci_mean and
    a_ii_mean keep the 1 +- 1e-3 row-sum invariant of their inputs.
    """

    a_ci_mean: np.ndarray
    a_ii_mean: np.ndarray
    o_ii_mean: np.ndarray
    layer_set: list[int]


def _check_rows_stochastic(mat: np.ndarray, key: str) -> None:
    if not np.isfinite(mat).all():
        bad = int(np.argwhere(~np.isfinite(mat))[0][0])
        raise ValidationError(f"{key}: non-finite entry in row {bad}")
    if mat.min() < 0.0 or mat.max() > 1.0 + _RANGE_EPS:
        i, _ = np.unravel_index(
            int(np.argmax(np.abs(mat - np.clip(mat, 0.0, 1.0)))), mat.shape
        )
        raise ValidationError(f"{key}: entries outside [0, 1] in row {int(i)}")
    sums = mat.sum(axis=1, dtype=np.float64)
    bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
    if bad.size:
        r = int(bad[0])
        raise ValidationError(
            f"{key}: row {r} sums to {sums[r]:.6g}, expected 1 +- {ROW_SUM_TOL}"
        )


def validate_bundle(bundle: AttentionBundle) -> None:
    """Check every bundle invariant; raise ValidationError naming the offender."""
    n = bundle.grid.n_tokens
    k = len(bundle.concepts)
    if k < 1:
        raise ValidationError("bundle must declare at least one concept")
    if not bundle.layers:
        raise ValidationError("bundle must hold at least one layer")
    if len(set(bundle.layers)) != len(bundle.layers):
        raise ValidationError("duplicate layer indices in bundle")
    for group, tensors, want in (
        ("a_ci", bundle.a_ci, (k, n)),
        ("a_ii", bundle.a_ii, (n, n)),
        ("o_ii", bundle.o_ii, (n, bundle.d_h)),
    ):
        for layer in bundle.layers:
            key = f"{group}/layer_{layer}"
            if layer not in tensors:
                raise ValidationError(f"missing tensor: {key}")
            mat = tensors[layer]
            if mat.dtype != np.float32:
                raise ValidationError(f"{key}: unsupported dtype {mat.dtype}, need float32")
            if mat.shape != want:
                raise ValidationError(f"{key}: shape {mat.shape}, expected {want}")
            if group == "o_ii":
                if not np.isfinite(mat).all():
                    raise ValidationError(f"{key}: non-finite entry")
            else:
                _check_rows_stochastic(mat, key)


# fixed archive timestamp: identical bundles produce identical bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_bundle(bundle: AttentionBundle, path) -> None:
    """Write a validated bundle archive; float payloads round-trip bit-exactly."""
    validate_bundle(bundle)
    manifest = {
        "grid": {"h": bundle.grid.h_tokens, "w": bundle.grid.w_tokens},
        "concepts": list(bundle.concepts),
        "layers": [int(l) for l in bundle.layers],
        "d_h": int(bundle.d_h),
        "model": bundle.meta.model,
        "timestep": int(bundle.meta.timestep),
        "trajectory": bundle.meta.trajectory,
        "prompt": bundle.meta.prompt,
        "format_version": FORMAT_VERSION,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, indent=1).encode("utf-8"))
        for group, tensors in (
            ("a_ci", bundle.a_ci),
            ("a_ii", bundle.a_ii),
            ("o_ii", bundle.o_ii),
        ):
            for layer in bundle.layers:
                buf = io.BytesIO()
                np.lib.format.write_array(
                    buf, np.ascontiguousarray(tensors[layer]), version=(1, 0)
                )
                _write_entry(zf, f"{group}/layer_{layer}.npy", buf.getvalue())


def _read_npy(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    try:
        raw = zf.read(name)
    except KeyError:
        raise ValidationError(f"missing archive entry: {name}") from None
    return np.lib.format.read_array(io.BytesIO(raw))


def load_bundle(path) -> AttentionBundle:
    """Load and fully validate a bundle archive."""
    with zipfile.ZipFile(path, "r") as zf:
        try:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        except KeyError:
            raise ValidationError("missing archive entry: manifest.json") from None
        for field_name in ("grid", "concepts", "layers", "d_h"):
            if field_name not in manifest:
                raise ValidationError(f"manifest missing key: {field_name}")
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValidationError(
                f"unsupported format_version: {manifest.get('format_version')!r}"
            )
        grid = GridShape(int(manifest["grid"]["h"]), int(manifest["grid"]["w"]))
        layers = [int(l) for l in manifest["layers"]]
        bundle = AttentionBundle(
            grid=grid,
            concepts=[str(c) for c in manifest["concepts"]],
            layers=layers,
            a_ci={l: _read_npy(zf, f"a_ci/layer_{l}.npy") for l in layers},
            a_ii={l: _read_npy(zf, f"a_ii/layer_{l}.npy") for l in layers},
            o_ii={l: _read_npy(zf, f"o_ii/layer_{l}.npy") for l in layers},
            d_h=int(manifest["d_h"]),
            meta=BundleMeta(
                model=str(manifest.get("model", "unknown")),
                timestep=int(manifest.get("timestep", 0)),
                trajectory=str(manifest.get("trajectory", "generation")),
                prompt=str(manifest.get("prompt", "")),
            ),
        )
    validate_bundle(bundle)
    return bundle


def aggregate_layers(bundle: AttentionBundle, layer_set) -> AggregatedSignals:
    """Elementwise arithmetic mean of the selected layers' tensors.

    The layer set is deduplicated and sorted before averaging, which makes the
    result exactly invariant to the order the caller lists layers in.  Means
    are accumulated in float64.
    """
    wanted = sorted(set(int(l) for l in layer_set))
    if not wanted:
        raise ValidationError("layer_set must be non-empty")
    known = set(bundle.layers)
    for l in wanted:
        if l not in known:
            raise ValidationError(f"unknown layer index: {l}")

    def mean_of(tensors: dict[int, np.ndarray]) -> np.ndarray:
        acc = np.zeros(tensors[wanted[0]].shape, dtype=np.float64)
        for l in wanted:
            acc += tensors[l]
        acc /= len(wanted)
        return acc

    return AggregatedSignals(
        a_ci_mean=mean_of(bundle.a_ci),
        a_ii_mean=mean_of(bundle.a_ii),
        o_ii_mean=mean_of(bundle.o_ii),
        layer_set=wanted,
    )
