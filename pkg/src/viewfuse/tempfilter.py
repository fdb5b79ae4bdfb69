"""Temporal stabilization of input-view depth via soft color-difference masks.

Each fixed camera compares its current color frame against the previous one;
where colors are static the filtered depth blends toward the running estimate,
where they change the new depth dominates. The mask is computed at quarter
resolution, dilated with a 3x3 max-pool, and bilinearly upscaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import MASK, ColorImage, ScalarMap, downscale_quarter, maxpool3, upscale_bilinear


@dataclass(frozen=True)
class FilterParams:
    """Sensitivity of the color-change mask.

    beta is the static-region floor of the mask (weight kept on the new
    depth even with zero color change); lambda_t scales color differences.
    """

    beta: float = 0.6
    lambda_t: float = 0.7

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not self.lambda_t > 0:
            raise ValueError(f"lambda_t must be positive, got {self.lambda_t}")


@dataclass
class ViewTemporalState:
    """Previous-frame color and filtered depth for one input view."""

    prev_color: ColorImage
    prev_filtered_depth: ScalarMap


def difference_mask(cur: ColorImage, prev: ColorImage, params: FilterParams) -> ScalarMap:
    """Soft per-pixel mask of color change between consecutive frames.

    The per-pixel channel-mean absolute difference is box-averaged to
    quarter resolution, mapped through min(diff / lambda_t + beta, 1),
    dilated with a 3x3 max-pool, and bilinearly upscaled to full size.
    Output values lie in [beta - eps, 1].

    Raises:
        ValueError: on dimension mismatch.
    """
    if cur.data.shape != prev.data.shape:
        raise ValueError(
            f"frame dimensions differ: {cur.data.shape} vs {prev.data.shape}"
        )
    diff = np.mean(np.abs(cur.data.astype(np.float64) - prev.data), axis=-1)
    q = downscale_quarter(diff)
    m = np.minimum(q / params.lambda_t + params.beta, 1.0)
    m = maxpool3(m)
    full = upscale_bilinear(m, cur.width, cur.height)
    return ScalarMap(full, kind=MASK)


def filter_depth(
    cur_depth: ScalarMap, mask: ScalarMap, state: ViewTemporalState | None
) -> ScalarMap:
    """Per-pixel convex blend of current and previous filtered depth.

    Returns mask * cur + (1 - mask) * prev. Where either depth is the
    invalid sentinel the other one wins (sentinel if both are invalid).
    At t=0 (no state) the current depth is returned unchanged.

    Raises:
        ValueError: on dimension mismatch.
    """
    if state is None:
        return ScalarMap(cur_depth.data.copy(), kind=cur_depth.kind)
    prev = state.prev_filtered_depth
    if cur_depth.data.shape != prev.data.shape or cur_depth.data.shape != mask.data.shape:
        raise ValueError("depth/mask dimensions differ")
    cur = cur_depth.data
    old = prev.data
    m = mask.data
    blend = m * cur + (1.0 - m) * old
    cur_ok = cur > 0
    old_ok = old > 0
    out = np.where(cur_ok & old_ok, blend, np.where(cur_ok, cur, old))
    return ScalarMap(out, kind=cur_depth.kind)
