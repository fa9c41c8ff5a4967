"""Dynamic-object masking: invalidate depth inside 2D detection boxes.

Detection boxes come from a detections file or from the synthetic renderer's
ground truth; the detector itself is out of scope. Masking runs after depth
filtering and before fusion so moving objects never enter the volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .planesweep import DepthMap


@dataclass(frozen=True)
class DetectionBox:
    """Axis-aligned 2D box; (x, y) is the top-left corner in pixels."""

    frame_id: int
    class_id: int
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0


def apply_masks(d: DepthMap, boxes: list[DetectionBox], dilation_px: int = 2,
                min_score: float = 0.5,
                class_ids: set[int] | None = None) -> DepthMap:
    """Invalidate every pixel inside any accepted box.

    Boxes are expanded by dilation_px on each side and clipped to the image;
    zero-area boxes are ignored. Boxes with score < min_score are skipped, as
    are classes not in ``class_ids`` when a class list is given.
    """
    out = d.copy()
    h, w = out.depth.shape
    for box in boxes:
        if box.score < min_score:
            continue
        if class_ids is not None and box.class_id not in class_ids:
            continue
        if box.w <= 0 or box.h <= 0:
            continue
        x0 = max(0, int(math.floor(box.x)) - dilation_px)
        y0 = max(0, int(math.floor(box.y)) - dilation_px)
        x1 = min(w, int(math.ceil(box.x + box.w)) + dilation_px)
        y1 = min(h, int(math.ceil(box.y + box.h)) + dilation_px)
        if x1 <= x0 or y1 <= y0:
            continue
        out.depth[y0:y1, x0:x1] = 0.0
    return out


def load_detections(path) -> dict[int, list[DetectionBox]]:
    """Read whitespace-separated detection lines grouped by frame id.

    Accepts `frame_id class_id x y w h` with an optional trailing score
    (assumed 1.0 when absent). Raises ValueError naming the offending line.
    """
    per_frame: dict[int, list[DetectionBox]] = {}
    with open(path, "r", encoding="ascii") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (6, 7):
                raise ValueError(f"{path}:{lineno}: expected 6 or 7 fields, got {len(parts)}")
            try:
                frame_id = int(parts[0])
                class_id = int(parts[1])
                x, y, bw, bh = (float(v) for v in parts[2:6])
                score = float(parts[6]) if len(parts) == 7 else 1.0
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            per_frame.setdefault(frame_id, []).append(
                DetectionBox(frame_id, class_id, x, y, bw, bh, score))
    return per_frame


def save_detections(path, boxes: list[DetectionBox], with_score: bool = False) -> None:
    """Write detection lines sorted by frame id (stable within a frame)."""
    def fmt(v: float) -> str:
        return f"{v:.6g}"

    with open(path, "w", encoding="ascii") as f:
        for box in sorted(boxes, key=lambda b: b.frame_id):
            fields = [str(box.frame_id), str(box.class_id), fmt(box.x), fmt(box.y),
                      fmt(box.w), fmt(box.h)]
            if with_score:
                fields.append(fmt(box.score))
            f.write(" ".join(fields) + "\n")
