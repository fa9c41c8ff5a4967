"""Outlier rejection for plane-sweep depth maps.

Three filters applied in a fixed order: best-cost threshold (split into an
upper and a lower image region, sky versus road), uniqueness of the winning
hypothesis against the runner-up, and local depth continuity. Each filter
only ever invalidates pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .planesweep import DepthMap


@dataclass(frozen=True)
class FilterConfig:
    alpha_upper: float = 0.05
    alpha_lower: float = 0.3
    horizon_row: int | None = None  # None = image height // 2
    beta: float = 1.2
    gamma: float = 0.5
    delta: float = 0.3
    consistency_window: int = 5

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha_upper <= 1.0 and 0.0 < self.alpha_lower <= 1.0):
            raise ValueError("alpha thresholds must be in (0, 1]")
        if self.beta < 1.0:
            raise ValueError("beta must be >= 1")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must be in (0, 1]")
        if self.consistency_window % 2 == 0 or self.consistency_window < 3:
            raise ValueError("consistency window must be odd and >= 3")


def best_cost_filter(d: DepthMap, cfg: FilterConfig) -> DepthMap:
    """Invalidate pixels whose winning cost exceeds the regional threshold."""
    out = d.copy()
    horizon = d.height // 2 if cfg.horizon_row is None else cfg.horizon_row
    rows = np.arange(d.height)[:, None]
    alpha = np.where(rows < horizon, cfg.alpha_upper, cfg.alpha_lower)
    out.depth[(out.depth > 0.0) & (out.best_cost > alpha)] = 0.0
    return out


def uniqueness_filter(d: DepthMap, cfg: FilterConfig) -> DepthMap:
    """Keep a pixel iff runner-up cost / winning cost >= beta."""
    out = d.copy()
    ratio = out.second_cost / np.maximum(out.best_cost, 1e-6)
    out.depth[(out.depth > 0.0) & (ratio < cfg.beta)] = 0.0
    return out


def consistency_filter(d: DepthMap, cfg: FilterConfig) -> DepthMap:
    """Invalidate pixels with too few depth-consistent window neighbors.

    A neighbor is consistent when it is valid and |depth - center| < gamma.
    Out-of-image and invalid neighbors count as inconsistent; the center
    pixel is excluded from the ratio denominator (window^2 - 1). Pixels with
    consistent fraction < delta are removed. All reads are from the input
    map, never from partially filtered state.
    """
    out = d.copy()
    win = cfg.consistency_window
    half = win // 2
    h, w = d.depth.shape
    depth = d.depth.astype(np.float64)
    valid = depth > 0.0

    count = np.zeros((h, w), dtype=np.int32)
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            if dy == 0 and dx == 0:
                continue
            sy0, sy1 = max(0, dy), min(h, h + dy)
            ty0, ty1 = max(0, -dy), min(h, h - dy)
            sx0, sx1 = max(0, dx), min(w, w + dx)
            tx0, tx1 = max(0, -dx), min(w, w - dx)
            nb = depth[sy0:sy1, sx0:sx1]
            nb_valid = valid[sy0:sy1, sx0:sx1]
            ctr = depth[ty0:ty1, tx0:tx1]
            good = nb_valid & (np.abs(nb - ctr) < cfg.gamma)
            count[ty0:ty1, tx0:tx1] += good
    denom = win * win - 1
    bad = valid & (count / denom < cfg.delta)
    out.depth[bad] = 0.0
    return out


def apply_filters(d: DepthMap, cfg: FilterConfig,
                  use_best_cost: bool = True, use_uniqueness: bool = True,
                  use_consistency: bool = True) -> DepthMap:
    """Run the enabled filters in the fixed order cost -> uniqueness -> continuity."""
    out = d
    if use_best_cost:
        out = best_cost_filter(out, cfg)
    if use_uniqueness:
        out = uniqueness_filter(out, cfg)
    if use_consistency:
        out = consistency_filter(out, cfg)
    return out
