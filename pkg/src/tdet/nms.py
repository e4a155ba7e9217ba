"""Greedy non-maximum suppression, per class.

A detection is suppressed when its IoU with an already-kept detection of
the same class exceeds the threshold. Kept indices come back sorted by
descending score, score ties broken by lower original index, which makes
the result independent of input ordering.
"""

from __future__ import annotations

import numpy as np




def nms(boxes, scores, class_ids=None, iou_thresh: float = 0.5, max_keep: int | None = None) -> np.ndarray:
    """Return kept indices into the input arrays.

    ``class_ids=None`` runs class-agnostic suppression (used for RPN
    proposals, where the only class is "object"). ``max_keep`` stops the
    greedy scan early; the kept prefix is unchanged by stopping.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = boxes.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(scores < 0) or np.any(scores > 1):
        raise ValueError("scores must lie in [0, 1]")
    if class_ids is None:
        class_ids = np.zeros(n, dtype=np.int64)
    else:
        class_ids = np.asarray(class_ids, dtype=np.int64).reshape(-1)

    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    kept: list[int] = []
    while order.size:
        i = order[0]
        kept.append(int(i))
        if max_keep is not None and len(kept) >= max_keep:
            break
        rest = order[1:]
        iw = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        ih = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        overlap = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        order = rest[(overlap <= iou_thresh) | (class_ids[rest] != class_ids[i])]
    return np.asarray(kept, dtype=np.int64)
