"""Shared helpers for both kernel backends."""

from __future__ import annotations

import numpy as np

BLOCK = 8  # voxels per block edge
BLOCK_VOLUME = BLOCK**3
KEY_OFFSET = 1 << 20  # supports block coords in (-2^20, 2^20)
ZNCC_VAR_EPS = 1e-8  # patches below this population variance are unmatched

_INTRA = None


def intra_offsets() -> np.ndarray:
    """(512, 3) int64 voxel offsets inside a block, row r = (r>>6, (r>>3)&7, r&7)."""
    global _INTRA
    if _INTRA is None:
        lin = np.arange(BLOCK_VOLUME, dtype=np.int64)
        _INTRA = np.stack([lin >> 6, (lin >> 3) & 7, lin & 7], axis=1)
        _INTRA.setflags(write=False)
    return _INTRA


def pack_keys(coords: np.ndarray) -> np.ndarray:
    """Pack integer block coords (..., 3) into sortable int64 keys."""
    c = np.asarray(coords, dtype=np.int64)
    if np.any(np.abs(c) >= KEY_OFFSET):
        raise ValueError("block coordinate out of packable range")
    return ((c[..., 0] + KEY_OFFSET) << 42) | ((c[..., 1] + KEY_OFFSET) << 21) | (c[..., 2] + KEY_OFFSET)


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64)
    mask = (1 << 21) - 1
    return np.stack(
        [(k >> 42) & mask, (k >> 21) & mask, k & mask], axis=-1
    ).astype(np.int64) - KEY_OFFSET


def box_sums(arr: np.ndarray, window: int) -> np.ndarray:
    """Sliding-window sums of a 2-D array via an integral image.

    Output matches the input shape; entries whose window is not fully inside
    the array are 0 (callers must mask them out separately).
    """
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape
    half = window // 2
    out = np.zeros((h, w), dtype=np.float64)
    if h < window or w < window:
        return out
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    s = ii[window:, window:] - ii[:-window, window:] - ii[window:, :-window] + ii[:-window, :-window]
    out[half : h - half, half : w - half] = s
    return out


def window_interior_mask(h: int, w: int, window: int) -> np.ndarray:
    """uint8 mask of pixels whose centered window lies fully inside the image."""
    half = window // 2
    m = np.zeros((h, w), dtype=np.uint8)
    if h >= window and w >= window:
        m[half : h - half, half : w - half] = 1
    return m


def flat_pose(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """Pack R (3,3) and t (3,) into the flat (12,) kernel argument."""
    out = np.empty(12, dtype=np.float64)
    out[:9] = np.asarray(rotation, dtype=np.float64).reshape(9)
    out[9:] = np.asarray(translation, dtype=np.float64).reshape(3)
    return out


def flat_cam(xi: float, fx: float, fy: float, cx: float, cy: float,
             width: int, height: int) -> np.ndarray:
    """Pack camera intrinsics into the flat (7,) kernel argument."""
    return np.array([xi, fx, fy, cx, cy, width, height], dtype=np.float64)
