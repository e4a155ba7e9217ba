"""RoI feature extraction by bilinear sampling on a pyramid level.

The roi is divided into out_size x out_size cells and each cell takes the
bilinear sample at its center, so the operator is differentiable in the
feature values (boxes are treated as constants). Feature pixel (i, j)
covers image coordinates around ((j + 0.5) * stride, (i + 0.5) * stride).
"""

from __future__ import annotations

import math

import numpy as np


def assign_pyramid_level(w: float, h: float, num_levels: int, canonical: int = 2) -> int:
    """Size heuristic: level = clamp(floor(l0 + log2(sqrt(wh)/224)))."""
    size = math.sqrt(max(w * h, 1e-12))
    k = math.floor(canonical + math.log2(size / 224.0))
    return min(max(k, 0), num_levels - 1)


def _cell_centers(box, out_size, stride):
    xmin, ymin, xmax, ymax = (float(v) for v in box)
    if xmax - xmin <= 0 or ymax - ymin <= 0:
        raise ValueError(f"roi must have positive area, got {box}")
    cw = (xmax - xmin) / out_size
    ch = (ymax - ymin) / out_size
    cx = xmin + (np.arange(out_size) + 0.5) * cw
    cy = ymin + (np.arange(out_size) + 0.5) * ch
    # image coords -> feature coords
    fx = cx / stride - 0.5
    fy = cy / stride - 0.5
    return np.meshgrid(fy, fx, indexing="ij")


def _corner_index(fy, fx, h, w):
    x0 = np.floor(fx)
    y0 = np.floor(fy)
    wx = fx - x0
    wy = fy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = (wy if dy else 1 - wy) * (wx if dx else 1 - wx)
            corners.append((np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1), weight * valid))
    return corners


def roi_extract(feature, stride: float, box, out_size: int) -> np.ndarray:
    """Sample a (C, out_size, out_size) grid from a (C, H, W) feature map."""
    feature = np.asarray(feature)
    c, h, w = feature.shape
    fy, fx = _cell_centers(box, out_size, stride)
    out = np.zeros((c, out_size, out_size), dtype=feature.dtype)
    for yy, xx, weight in _corner_index(fy, fx, h, w):
        out += feature[:, yy, xx] * weight[None].astype(feature.dtype)
    return out


def roi_extract_backward(feature_shape, stride: float, box, out_size: int, grad) -> np.ndarray:
    """Scatter the output gradient back onto the feature map."""
    c, h, w = feature_shape
    grad = np.asarray(grad)
    fy, fx = _cell_centers(box, out_size, stride)
    gfeat = np.zeros(feature_shape, dtype=grad.dtype)
    for yy, xx, weight in _corner_index(fy, fx, h, w):
        np.add.at(
            gfeat,
            (slice(None), yy.reshape(-1), xx.reshape(-1)),
            (grad * weight[None].astype(grad.dtype)).reshape(c, -1),
        )
    return gfeat


def _batch_cells(boxes, out_size, stride):
    """Vectorized cell centers in feature coords for (M, 4) boxes."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    if np.any(w <= 0) or np.any(h <= 0):
        raise ValueError("all rois must have positive area")
    cells = np.arange(out_size) + 0.5
    cx = boxes[:, 0, None] + cells[None] * (w[:, None] / out_size)
    cy = boxes[:, 1, None] + cells[None] * (h[:, None] / out_size)
    fx = (cx / stride - 0.5)[:, None, :]  # (M, 1, out)
    fy = (cy / stride - 0.5)[:, :, None]  # (M, out, 1)
    m = boxes.shape[0]
    return (
        np.broadcast_to(fy, (m, out_size, out_size)),
        np.broadcast_to(fx, (m, out_size, out_size)),
    )


def assign_levels(boxes, num_levels: int) -> np.ndarray:
    return np.array(
        [assign_pyramid_level(b[2] - b[0], b[3] - b[1], num_levels) for b in boxes],
        dtype=np.int64,
    )


def roi_extract_batch(features, strides, boxes, out_size: int):
    """Batched multi-level extraction.

    ``features``: one (C, H, W) map per pyramid level; ``boxes``: (N, 4).
    Returns ((N, C, out, out) features, per-roi level array). Semantics
    per roi are identical to ``roi_extract``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    c = features[0].shape[0]
    levels = assign_levels(boxes, len(features))
    out = np.zeros((n, c, out_size, out_size), dtype=features[0].dtype)
    for lvl in np.unique(levels):
        idx = np.flatnonzero(levels == lvl)
        feat = features[lvl]
        _, h, w = feat.shape
        fy, fx = _batch_cells(boxes[idx], out_size, strides[lvl])
        acc = np.zeros((len(idx), c, out_size, out_size), dtype=feat.dtype)
        for yy, xx, weight in _corner_index(fy, fx, h, w):
            acc += feat[:, yy, xx].transpose(1, 0, 2, 3) * weight[:, None].astype(feat.dtype)
        out[idx] = acc
    return out, levels


def roi_backward_batch(feature_shapes, strides, boxes, levels, out_size: int, grads):
    """Scatter batched roi gradients; returns one gradient map per level."""
    grads = np.asarray(grads)
    gfeats = [np.zeros(shape, dtype=grads.dtype) for shape in feature_shapes]
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    for lvl in np.unique(levels):
        idx = np.flatnonzero(levels == lvl)
        c, h, w = feature_shapes[lvl]
        fy, fx = _batch_cells(boxes[idx], out_size, strides[lvl])
        g = grads[idx]
        for yy, xx, weight in _corner_index(fy, fx, h, w):
            contrib = (g * weight[:, None].astype(grads.dtype)).transpose(1, 0, 2, 3)
            np.add.at(
                gfeats[lvl],
                (slice(None), yy.reshape(-1), xx.reshape(-1)),
                contrib.reshape(c, -1),
            )
    return gfeats
