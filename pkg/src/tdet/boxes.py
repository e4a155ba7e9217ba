"""Axis-aligned box geometry: IoU, encode/decode against anchors, clipping.

Boxes are (xmin, ymin, xmax, ymax) floats with xmin < xmax, ymin < ymax;
array forms are (N, 4). Encoding follows the usual parameterization:
center deltas normalized by anchor size, log size ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Detection:
    """A scored class box."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    class_id: int
    score: float

    def box(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax], dtype=np.float64)


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU of (N, 4) against (M, 4) boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.maximum(
        0.0, np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    )
    iy = np.maximum(
        0.0, np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    )
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def _centers(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    cx = boxes[..., 0] + 0.5 * w
    cy = boxes[..., 1] + 0.5 * h
    return cx, cy, w, h


def encode_boxes(anchors, gts) -> np.ndarray:
    """Regression targets t = (dx/aw, dy/ah, log(gw/aw), log(gh/ah))."""
    ax, ay, aw, ah = _centers(anchors)
    gx, gy, gw, gh = _centers(gts)
    if np.any(gw <= 0) or np.any(gh <= 0):
        raise ValueError("ground-truth boxes must have positive width and height")
    t = np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1)
    return t.astype(np.float32)


def decode_boxes(anchors, t) -> np.ndarray:
    """Exact inverse of ``encode_boxes``; no clipping here."""
    ax, ay, aw, ah = _centers(anchors)
    t = np.asarray(t, dtype=np.float64)
    cx = ax + t[..., 0] * aw
    cy = ay + t[..., 1] * ah
    w = aw * np.exp(t[..., 2])
    h = ah * np.exp(t[..., 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1).astype(
        np.float32
    )


def encode_box(anchor, gt):
    return encode_boxes(np.asarray(anchor)[None], np.asarray(gt)[None])[0]


def decode_box(anchor, t):
    return decode_boxes(np.asarray(anchor)[None], np.asarray(t)[None])[0]


def clip_boxes(boxes, width: float, height: float) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float32).copy()
    boxes[..., 0::2] = np.clip(boxes[..., 0::2], 0.0, width)
    boxes[..., 1::2] = np.clip(boxes[..., 1::2], 0.0, height)
    return boxes
