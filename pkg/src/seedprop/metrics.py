"""Segmentation metrics: Acc / IoU / AP, foreground-restricted variants, and
the non-target activation ratio, aggregated over image-concept pairs.

Standard metrics treat the whole image as the evaluation region; the
fg-restricted variants evaluate only on the union of annotated concept masks,
isolating target-vs-distractor separation from background handling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchor import Anchor, anchor_hit
from .errors import ValidationError
from .propagation import BinaryMask, HeatMap


@dataclass
class SceneAnnotation:
    """Per-concept ground-truth pixel masks for one image."""

    image_id: str
    pixel_h: int
    pixel_w: int
    masks: dict[str, np.ndarray]

    def __post_init__(self):
        for concept, mask in self.masks.items():
            if mask.shape != (self.pixel_h, self.pixel_w):
                raise ValidationError(
                    f"{self.image_id}/{concept}: mask shape {mask.shape} != "
                    f"({self.pixel_h}, {self.pixel_w})"
                )

    def other_union(self, concept: str) -> np.ndarray:
        """Union of all non-target masks, minus pixels overlapping the target."""
        target = self.masks[concept]
        other = np.zeros_like(target, dtype=bool)
        for name, mask in self.masks.items():
            if name != concept:
                other |= mask.astype(bool)
        return other & ~target.astype(bool)


@dataclass
class MetricsReport:
    acc: float
    miou: float
    map: float
    acc_fg: float
    miou_fg: float
    map_fg: float
    nar: float
    anchor_hit_rate: float
    pair_count: int
    pair_rows: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "miou": self.miou,
            "map": self.map,
            "acc_fg": self.acc_fg,
            "miou_fg": self.miou_fg,
            "map_fg": self.map_fg,
            "nar": self.nar,
            "anchor_hit_rate": self.anchor_hit_rate,
            "pair_count": self.pair_count,
            "pairs": self.pair_rows,
            "flags": self.flags,
        }


def upsample_heatmap(hm: HeatMap, pixel_h: int, pixel_w: int) -> np.ndarray:
    """Bilinear upsampling with patch centers as sample points.

    Token (r, c) carries the value at pixel-space point ((c+0.5)*W/w,
    (r+0.5)*H/h); pixels outside the outer patch centers clamp to the edge
    value.  Equal dimensions reproduce the input exactly.
    """
    grid = hm.grid
    if pixel_h < grid.h_tokens or pixel_w < grid.w_tokens:
        raise ValidationError(
            f"pixel dims ({pixel_h}, {pixel_w}) below grid "
            f"({grid.h_tokens}, {grid.w_tokens})"
        )
    g = hm.as_grid()
    h, w = g.shape
    v = np.clip((np.arange(pixel_h) + 0.5) * h / pixel_h - 0.5, 0.0, h - 1.0)
    u = np.clip((np.arange(pixel_w) + 0.5) * w / pixel_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(v).astype(np.intp)
    x0 = np.floor(u).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (v - y0)[:, None]
    fx = (u - x0)[None, :]
    out = (
        g[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + g[np.ix_(y0, x1)] * (1 - fy) * fx
        + g[np.ix_(y1, x0)] * fy * (1 - fx)
        + g[np.ix_(y1, x1)] * fy * fx
    )
    return out


def _as_region(region, shape) -> np.ndarray:
    if region is None:
        return np.ones(shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != shape:
        raise ValidationError(f"region shape {region.shape} != {shape}")
    return region


def binary_metrics(pred: np.ndarray, gt: np.ndarray, region=None) -> tuple[float, float]:
    """(accuracy, IoU) of a predicted mask inside an optional region.

    IoU is 1 when both masks are empty within the region.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValidationError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    sel = _as_region(region, pred.shape)
    n_eval = int(sel.sum())
    if n_eval == 0:
        return 1.0, 1.0
    acc = float((pred[sel] == gt[sel]).mean())
    inter = int((pred & gt & sel).sum())
    union = int(((pred | gt) & sel).sum())
    iou = inter / union if union else 1.0
    return acc, float(iou)


def average_precision(pred_scores: np.ndarray, gt: np.ndarray, region=None) -> float:
    """Step-wise AP: precision integrated over recall increments.

    The decision threshold sweeps the sorted unique scores within the region;
    tied scores enter as one block.  An empty ground truth yields 0 (callers
    flag it).
    """
    scores = np.asarray(pred_scores, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if scores.shape != gt.shape:
        raise ValidationError(f"scores shape {scores.shape} != gt shape {gt.shape}")
    sel = _as_region(region, scores.shape)
    s = scores[sel]
    g = gt[sel]
    n_pos = int(g.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-s, kind="stable")
    s = s[order]
    g = g[order]
    tp = np.cumsum(g)
    fp = np.cumsum(~g)
    # last index of each tied-score block
    block_end = np.nonzero(np.append(s[:-1] != s[1:], True))[0]
    tp_b = tp[block_end].astype(np.float64)
    fp_b = fp[block_end].astype(np.float64)
    precision = tp_b / (tp_b + fp_b)
    recall = tp_b / n_pos
    d_recall = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(d_recall * precision))


def nar(heat: np.ndarray, m_c: np.ndarray, m_other: np.ndarray) -> float:
    """Non-target activation ratio of a continuous response map.

    Pixels of m_other overlapping m_c are excluded before the ratio; a zero
    denominator yields 0 (callers flag it).
    """
    heat = np.asarray(heat, dtype=np.float64)
    m_c = np.asarray(m_c, dtype=bool)
    m_other = np.asarray(m_other, dtype=bool) & ~m_c
    if heat.shape != m_c.shape or heat.shape != m_other.shape:
        raise ValidationError("nar: shape mismatch between heat and masks")
    other_mass = float(heat[m_other].sum())
    denom = float(heat[m_c].sum()) + other_mass
    if denom == 0.0:
        return 0.0
    return other_mass / denom


@dataclass
class PairInput:
    """One (image, concept) evaluation unit."""

    heatmap: HeatMap
    mask: BinaryMask
    anchor: Anchor
    annotation: SceneAnnotation
    concept: str


def evaluate_pair(pair: PairInput) -> dict:
    ann = pair.annotation
    if pair.concept not in ann.masks:
        raise ValidationError(f"{ann.image_id}: no annotation for concept {pair.concept!r}")
    gt = ann.masks[pair.concept].astype(bool)
    m_other = ann.other_union(pair.concept)
    region_fg = gt | m_other

    heat = upsample_heatmap(pair.heatmap, ann.pixel_h, ann.pixel_w)
    pred = heat > pair.mask.threshold_used

    acc, iou = binary_metrics(pred, gt)
    ap = average_precision(heat, gt)
    acc_fg, iou_fg = binary_metrics(pred, gt, region=region_fg)
    ap_fg = average_precision(heat, gt, region=region_fg)
    ratio = nar(heat, gt, m_other)
    hit = anchor_hit(pair.anchor, gt, pair.heatmap.grid)

    flags = []
    if pair.heatmap.degenerate:
        flags.append("degenerate_heatmap")
    if not gt.any():
        flags.append("empty_gt")
    if float(heat[region_fg].sum()) == 0.0:
        flags.append("zero_fg_response")

    return {
        "image_id": ann.image_id,
        "concept": pair.concept,
        "acc": acc,
        "iou": iou,
        "ap": ap,
        "acc_fg": acc_fg,
        "iou_fg": iou_fg,
        "ap_fg": ap_fg,
        "nar": ratio,
        "anchor_hit": bool(hit),
        "flags": flags,
    }


def evaluate_dataset(pairs: list[PairInput]) -> MetricsReport:
    """Unweighted mean of per-pair metrics over all image-concept pairs."""
    if not pairs:
        raise ValidationError("evaluate_dataset needs at least one pair")
    rows = [evaluate_pair(p) for p in pairs]
    mean = lambda key: float(np.mean([r[key] for r in rows]))
    flags = sorted({f for r in rows for f in r["flags"]})
    return MetricsReport(
        acc=mean("acc"),
        miou=mean("iou"),
        map=mean("ap"),
        acc_fg=mean("acc_fg"),
        miou_fg=mean("iou_fg"),
        map_fg=mean("ap_fg"),
        nar=mean("nar"),
        anchor_hit_rate=float(np.mean([r["anchor_hit"] for r in rows])),
        pair_count=len(rows),
        pair_rows=rows,
        flags=flags,
    )
