"""Semantic anchor selection from concept-to-image attention rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import GridShape
from .errors import ValidationError


@dataclass(frozen=True)
class Anchor:
    """Peak-response token for one queried concept.

    token_index is the smallest index attaining the row maximum; tie_count
    records how many tokens attain it (tie_count == N means the row was
    constant, which is flagged by callers but not fatal).
    """

    concept_index: int
    token_index: int
    response_value: float
    tie_count: int


def select_anchor(a_ci_mean: np.ndarray, k: int) -> Anchor:
    """Argmax of concept row k, ties resolved to the smallest token index."""
    if not 0 <= k < a_ci_mean.shape[0]:
        raise ValidationError(
            f"concept index {k} out of range for {a_ci_mean.shape[0]} concepts"
        )
    row = np.asarray(a_ci_mean[k], dtype=np.float64)
    token = int(np.argmax(row))
    peak = float(row[token])
    ties = int(np.count_nonzero(row == peak))
    return Anchor(concept_index=k, token_index=token, response_value=peak, tie_count=ties)


def anchor_pixel(anchor: Anchor, grid: GridShape, pixel_h: int, pixel_w: int) -> tuple[int, int]:
    """Pixel coordinates (y, x) of the anchor token's patch center."""
    row, col = grid.token_rc(anchor.token_index)
    y = int((row + 0.5) * pixel_h / grid.h_tokens)
    x = int((col + 0.5) * pixel_w / grid.w_tokens)
    return min(y, pixel_h - 1), min(x, pixel_w - 1)


def anchor_hit(anchor: Anchor, gt_mask: np.ndarray, grid: GridShape) -> bool:
    """True iff the anchor patch center lands inside the concept's pixel mask.

    The token grid is mapped onto the mask's pixel grid by patch centers:
    token (r, c) checks pixel ((r+0.5)*H/h, (c+0.5)*W/w).
    """
    gt_mask = np.asarray(gt_mask)
    if gt_mask.ndim != 2:
        raise ValidationError(f"ground-truth mask must be 2-D, got shape {gt_mask.shape}")
    ph, pw = gt_mask.shape
    if ph < grid.h_tokens or pw < grid.w_tokens:
        raise ValidationError(
            f"mask {ph}x{pw} smaller than token grid {grid.h_tokens}x{grid.w_tokens}"
        )
    y, x = anchor_pixel(anchor, grid, ph, pw)
    return bool(gt_mask[y, x])
