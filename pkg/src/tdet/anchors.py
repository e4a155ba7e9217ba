"""Anchor generation and anchor/ground-truth matching.

Anchors tile every feature-map cell of every pyramid level with one box
per aspect ratio; ratio r gives width base*sqrt(r) and height base/sqrt(r)
so the area stays base^2. Matching labels each anchor positive, negative
or ignore against IoU thresholds and guarantees the argmax anchor of each
ground truth is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import encode_boxes, iou_matrix

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1


@dataclass
class AnchorSet:
    """All anchors of one image, flattened level by level.

    ``level``/``iy``/``ix``/``ridx`` locate each anchor's cell in the RPN
    output maps; ``boxes`` are (xmin, ymin, xmax, ymax).
    """

    boxes: np.ndarray
    level: np.ndarray
    iy: np.ndarray
    ix: np.ndarray
    ridx: np.ndarray
    level_shapes: list = field(default_factory=list)
    num_ratios: int = 0

    def __len__(self) -> int:
        return self.boxes.shape[0]


def generate_anchors(levels, ratios) -> AnchorSet:
    """Tile anchors over feature grids.

    ``levels``: sequence of (stride, base_scale, grid_h, grid_w), strides
    ascending. One anchor per (cell, ratio); total count is
    sum(grid_h * grid_w * len(ratios)).
    """
    ratios = list(ratios)
    if not ratios:
        raise ValueError("need at least one aspect ratio")
    strides = [lv[0] for lv in levels]
    if strides != sorted(strides):
        raise ValueError("level strides must be ascending")

    boxes, level_arr, iy_arr, ix_arr, ridx_arr = [], [], [], [], []
    shapes = []
    for li, (stride, base, gh, gw) in enumerate(levels):
        shapes.append((gh, gw))
        ws = np.array([base * np.sqrt(r) for r in ratios])
        hs = np.array([base / np.sqrt(r) for r in ratios])
        yy, xx = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        cx = (xx.reshape(-1, 1) + 0.5) * stride
        cy = (yy.reshape(-1, 1) + 0.5) * stride
        b = np.stack(
            [
                np.broadcast_to(cx - ws / 2, (gh * gw, len(ratios))),
                np.broadcast_to(cy - hs / 2, (gh * gw, len(ratios))),
                np.broadcast_to(cx + ws / 2, (gh * gw, len(ratios))),
                np.broadcast_to(cy + hs / 2, (gh * gw, len(ratios))),
            ],
            axis=-1,
        ).reshape(-1, 4)
        boxes.append(b)
        n = gh * gw * len(ratios)
        level_arr.append(np.full(n, li, dtype=np.int32))
        iy_arr.append(np.repeat(yy.reshape(-1), len(ratios)).astype(np.int32))
        ix_arr.append(np.repeat(xx.reshape(-1), len(ratios)).astype(np.int32))
        ridx_arr.append(np.tile(np.arange(len(ratios), dtype=np.int32), gh * gw))

    return AnchorSet(
        boxes=np.concatenate(boxes).astype(np.float32),
        level=np.concatenate(level_arr),
        iy=np.concatenate(iy_arr),
        ix=np.concatenate(ix_arr),
        ridx=np.concatenate(ridx_arr),
        level_shapes=shapes,
        num_ratios=len(ratios),
    )


@dataclass
class MatchResult:
    """Per-anchor labels (POSITIVE/NEGATIVE/IGNORE), matched gt index

    (-1 where none) and regression targets for positives (zeros elsewhere).
    """

    labels: np.ndarray
    gt_index: np.ndarray
    t_star: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == POSITIVE)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == NEGATIVE)


def match_anchors(anchor_boxes, gt_boxes, pos_iou: float, neg_iou: float) -> MatchResult:
    """Label anchors against ground truth.

    Positive at IoU >= pos_iou with any gt, or as a gt's argmax anchor
    (so each gt claims at least one positive); negative below neg_iou;
    ignore in between. Targets are encoded against the best-IoU gt, ties
    broken toward the lowest gt index.
    """
    if pos_iou < neg_iou:
        raise ValueError("pos_iou must be >= neg_iou")
    anchor_boxes = np.asarray(anchor_boxes, dtype=np.float32).reshape(-1, 4)
    n = anchor_boxes.shape[0]
    labels = np.full(n, IGNORE, dtype=np.int8)
    gt_index = np.full(n, -1, dtype=np.int64)
    t_star = np.zeros((n, 4), dtype=np.float32)

    gt_boxes = np.asarray(gt_boxes, dtype=np.float32).reshape(-1, 4)
    if gt_boxes.shape[0] == 0:
        labels[:] = NEGATIVE
        return MatchResult(labels, gt_index, t_star)

    overlap = iou_matrix(anchor_boxes, gt_boxes)  # (N, M)
    best_gt = overlap.argmax(axis=1)  # ties -> lowest gt index
    best_iou = overlap[np.arange(n), best_gt]

    labels[best_iou < neg_iou] = NEGATIVE
    labels[best_iou >= pos_iou] = POSITIVE
    # Argmax anchor of each gt is forced positive.
    labels[overlap.argmax(axis=0)] = POSITIVE

    pos = labels == POSITIVE
    gt_index[pos] = best_gt[pos]
    if pos.any():
        t_star[pos] = encode_boxes(anchor_boxes[pos], gt_boxes[best_gt[pos]])
    return MatchResult(labels, gt_index, t_star)
