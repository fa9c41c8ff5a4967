"""Depth-map and point-cloud quality metrics.

Depth errors are absolute differences over pixels valid in both maps.
Point-cloud quality is accuracy (fraction of reconstructed points within t1
of the reference cloud) and completeness (fraction of reference points
within t2 of the reconstruction), both from exact nearest-neighbor
distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import FisheyeCamera, Pose
from .planesweep import DepthMap

TOLERANCE_SWEEP = (0.05, 0.10, 0.15, 0.20, 0.25)


@dataclass(frozen=True)
class DepthErrorStats:
    frame_id: int
    median_abs_err: float
    mean_abs_err: float
    valid_evaluated: int

    @property
    def empty(self) -> bool:
        return self.valid_evaluated == 0


@dataclass(frozen=True)
class MapQuality:
    accuracy: float
    completeness: float
    t1: float
    t2: float

    def __post_init__(self):
        for v in (self.accuracy, self.completeness):
            if not 0.0 <= v <= 1.0:
                raise ValueError("ratios must lie in [0, 1]")


def _depth_of(x) -> np.ndarray:
    return x.depth if isinstance(x, DepthMap) else np.asarray(x)


def depth_error_stats(est, gt, frame_id: int = 0) -> DepthErrorStats:
    """Median/mean absolute depth error over jointly valid pixels."""
    de = _depth_of(est)
    dg = _depth_of(gt)
    if de.shape != dg.shape:
        raise ValueError(f"depth shape mismatch: {de.shape} vs {dg.shape}")
    both = (de > 0) & (dg > 0) & np.isfinite(de) & np.isfinite(dg)
    n = int(both.sum())
    if n == 0:
        return DepthErrorStats(frame_id, float("nan"), float("nan"), 0)
    err = np.abs(de[both].astype(np.float64) - dg[both].astype(np.float64))
    return DepthErrorStats(frame_id, float(np.median(err)), float(err.mean()), n)


def nn_distances(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Exact distance from each query point to its nearest ref point.

    A k-d tree proposes candidate neighbors; the returned distance is then
    recomputed componentwise with a fixed summation order so the values are
    bit-identical to a plain brute-force evaluation of the same expression.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    if ref.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    if query.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    k = min(4, ref.shape[0])
    _, idx = cKDTree(ref).query(query, k=k)
    idx = idx.reshape(query.shape[0], k)
    cand = ref[idx]  # (N, k, 3)
    dx = query[:, None, 0] - cand[:, :, 0]
    dy = query[:, None, 1] - cand[:, :, 1]
    dz = query[:, None, 2] - cand[:, :, 2]
    d2 = (dx * dx + dy * dy) + dz * dz
    return np.sqrt(d2.min(axis=1))


def accuracy_completeness(Sc: np.ndarray, Sgt: np.ndarray,
                          t1: float = 0.10, t2: float = 0.25) -> MapQuality:
    """Accuracy of Sc against Sgt at t1; completeness of Sgt against Sc at t2.

    Empty Sc yields accuracy 1 by convention (no point is wrong); empty Sgt
    is an error.
    """
    Sc = np.asarray(Sc, dtype=np.float64).reshape(-1, 3)
    Sgt = np.asarray(Sgt, dtype=np.float64).reshape(-1, 3)
    if Sgt.shape[0] == 0:
        raise ValueError("ground-truth cloud is empty")
    if Sc.shape[0] == 0:
        return MapQuality(1.0, 0.0, t1, t2)
    acc = float(np.mean(nn_distances(Sc, Sgt) <= t1))
    comp = float(np.mean(nn_distances(Sgt, Sc) <= t2))
    return MapQuality(acc, comp, t1, t2)


def quality_sweep(Sc: np.ndarray, Sgt: np.ndarray,
                  tolerances=TOLERANCE_SWEEP) -> dict[float, MapQuality]:
    """accuracy_completeness at several tolerances, reusing the distances."""
    Sc = np.asarray(Sc, dtype=np.float64).reshape(-1, 3)
    Sgt = np.asarray(Sgt, dtype=np.float64).reshape(-1, 3)
    if Sgt.shape[0] == 0:
        raise ValueError("ground-truth cloud is empty")
    if Sc.shape[0] == 0:
        return {float(t): MapQuality(1.0, 0.0, t, t) for t in tolerances}
    d_acc = nn_distances(Sc, Sgt)
    d_comp = nn_distances(Sgt, Sc)
    out = {}
    for t in tolerances:
        out[float(t)] = MapQuality(float(np.mean(d_acc <= t)),
                                   float(np.mean(d_comp <= t)), t, t)
    return out


def project_gt_depth(cloud: np.ndarray, cam: FisheyeCamera,
                     world_to_cam: Pose) -> DepthMap:
    """Z-buffered splat of a world-frame cloud into a fisheye view.

    Each point projects through the camera model; the smallest range per
    pixel wins; pixels hit by nothing stay invalid.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    out = DepthMap.empty(cam.height, cam.width)
    if cloud.shape[0] == 0:
        return out
    pc = world_to_cam.apply(cloud)
    uv, valid = cam.project(pc)
    if not np.any(valid):
        return out
    rng = np.linalg.norm(pc[valid], axis=1)
    ix = np.floor(uv[valid, 0]).astype(np.int64)
    iy = np.floor(uv[valid, 1]).astype(np.int64)
    ix = np.clip(ix, 0, cam.width - 1)
    iy = np.clip(iy, 0, cam.height - 1)
    buf = np.full(cam.height * cam.width, np.inf, dtype=np.float64)
    np.minimum.at(buf, iy * cam.width + ix, rng)
    buf[~np.isfinite(buf)] = 0.0
    out.depth[:] = buf.reshape(cam.height, cam.width).astype(np.float32)
    out.best_cost[out.depth > 0] = 0.0
    return out
