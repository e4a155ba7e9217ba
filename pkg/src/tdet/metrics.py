"""Detection scoring: greedy per-image matching, all-points average
precision with the monotone precision envelope, and the aggregate
mAP / mAR / F1 triple.

Detections match the highest-IoU unmatched ground truth of their own
class at or above the IoU threshold, one match per ground truth, in
descending score order. Classes without any ground truth are excluded
from the aggregates; F1 is computed per class at a fixed score threshold
and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou_matrix

TOP_DETECTIONS_PER_IMAGE = 100  # recall (mAR) uses at most this many, by score


@dataclass
class ClassMetrics:
    ap: float = 0.0
    recall: float = 0.0
    precision: float = 0.0
    f1: float = 0.0
    num_gt: int = 0
    num_det: int = 0


@dataclass
class EvalReport:
    per_class: dict = field(default_factory=dict)  # class_id -> ClassMetrics
    map: float = 0.0
    mar: float = 0.0
    f1: float = 0.0
    iou_thresh: float = 0.5
    score_thresh: float = 0.5
    num_gt: int = 0
    num_det: int = 0


def match_detections(det_boxes, det_classes, gt_boxes, gt_classes, iou_thresh: float = 0.5):
    """Greedy TP/FP flags for one image's detections (already sorted by
    descending score, ties in input order)."""
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    det_classes = np.asarray(det_classes, dtype=np.int64).reshape(-1)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    flags = np.zeros(det_boxes.shape[0], dtype=bool)
    if det_boxes.shape[0] == 0 or gt_boxes.shape[0] == 0:
        return flags
    overlap = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(gt_boxes.shape[0], dtype=bool)
    for i in range(det_boxes.shape[0]):
        candidates = (gt_classes == det_classes[i]) & ~taken & (overlap[i] >= iou_thresh)
        if not candidates.any():
            continue
        masked = np.where(candidates, overlap[i], -1.0)
        j = int(masked.argmax())
        taken[j] = True
        flags[i] = True
    return flags


def average_precision(tp_flags, scores, n_gt: int) -> float:
    """All-points AP under the monotone non-increasing precision envelope.

    ``tp_flags`` must be ordered by descending score (``scores`` document
    that order; ties keep input order).
    """
    if n_gt < 1:
        raise ValueError("average precision needs at least one ground truth")
    tp_flags = np.asarray(tp_flags, dtype=bool).reshape(-1)
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev) * env).sum())


def evaluate(detections, ground_truth, iou_thresh: float = 0.5, score_thresh: float = 0.5) -> EvalReport:
    """Score detections against ground truth.

    ``detections``: rows (image_name, class_id, score, xmin, ymin, xmax,
    ymax). ``ground_truth``: dict image_name -> list of objects with
    .class_id/.xmin/... (BoxAnnotation works). Classes are taken from the
    ground truth; evaluation without any ground truth is rejected.
    """
    gt_by_image = {
        name: (
            np.array([[a.xmin, a.ymin, a.xmax, a.ymax] for a in anns], np.float64).reshape(-1, 4),
            np.array([a.class_id for a in anns], np.int64),
        )
        for name, anns in ground_truth.items()
    }
    total_gt = sum(cls.size for _, cls in gt_by_image.values())
    if total_gt == 0:
        raise ValueError("evaluation needs at least one ground-truth object")
    class_ids = sorted({int(c) for _, cls in gt_by_image.values() for c in cls})

    # Per-image greedy matching on the top-scored detections.
    flags_per_class: dict[int, list] = {c: [] for c in class_ids}
    dets_by_image: dict[str, list] = {}
    for row in detections:
        dets_by_image.setdefault(row[0], []).append(row)

    matched_rows = []  # (class_id, score, tp, image)
    for name, rows in dets_by_image.items():
        rows = sorted(rows, key=lambda r: -r[2])[:TOP_DETECTIONS_PER_IMAGE]
        boxes = np.array([r[3:7] for r in rows], np.float64).reshape(-1, 4)
        classes = np.array([r[1] for r in rows], np.int64)
        gt_boxes, gt_classes = gt_by_image.get(name, (np.zeros((0, 4)), np.zeros(0, np.int64)))
        flags = match_detections(boxes, classes, gt_boxes, gt_classes, iou_thresh)
        for r, tp in zip(rows, flags):
            matched_rows.append((int(r[1]), float(r[2]), bool(tp), name))

    report = EvalReport(iou_thresh=iou_thresh, score_thresh=score_thresh, num_gt=total_gt,
                        num_det=len(matched_rows))
    ap_values, recalls, f1s = [], [], []
    for cls in class_ids:
        n_gt = sum(int((gcls == cls).sum()) for _, gcls in gt_by_image.values())
        rows = [r for r in matched_rows if r[0] == cls]
        rows.sort(key=lambda r: -r[1])
        flags = np.array([r[2] for r in rows], dtype=bool)
        scores = np.array([r[1] for r in rows])
        m = ClassMetrics(num_gt=n_gt, num_det=len(rows))
        m.ap = average_precision(flags, scores, n_gt) if n_gt else 0.0
        m.recall = float(flags.sum() / n_gt) if n_gt else 0.0
        confident = scores >= score_thresh
        tp_conf = int(flags[confident].sum())
        det_conf = int(confident.sum())
        m.precision = tp_conf / det_conf if det_conf else 0.0
        recall_conf = tp_conf / n_gt if n_gt else 0.0
        denom = m.precision + recall_conf
        m.f1 = 2.0 * m.precision * recall_conf / denom if denom > 0 else 0.0
        report.per_class[cls] = m
        ap_values.append(m.ap)
        recalls.append(m.recall)
        f1s.append(m.f1)

    report.map = float(np.mean(ap_values))
    report.mar = float(np.mean(recalls))
    report.f1 = float(np.mean(f1s))
    return report


def report_csv_lines(report: EvalReport, class_names=None) -> list:
    lines = ["class,ap,recall,precision,f1,num_gt,num_det"]
    for cls, m in sorted(report.per_class.items()):
        name = class_names[cls] if class_names and cls < len(class_names) else str(cls)
        lines.append(
            f"{name},{m.ap:.6f},{m.recall:.6f},{m.precision:.6f},{m.f1:.6f},{m.num_gt},{m.num_det}"
        )
    lines.append(
        f"aggregate,{report.map:.6f},{report.mar:.6f},,{report.f1:.6f},{report.num_gt},{report.num_det}"
    )
    return lines


def report_table(report: EvalReport, class_names=None) -> str:
    """Aligned text table with the mAP / mAR / F1 triple on the last row."""
    rows = [("class", "AP", "recall", "prec", "F1", "#gt", "#det")]
    for cls, m in sorted(report.per_class.items()):
        name = class_names[cls] if class_names and cls < len(class_names) else str(cls)
        rows.append(
            (name, f"{m.ap:.3f}", f"{m.recall:.3f}", f"{m.precision:.3f}", f"{m.f1:.3f}",
             str(m.num_gt), str(m.num_det))
        )
    rows.append(
        ("mAP/mAR/F1", f"{report.map:.3f}", f"{report.mar:.3f}", "", f"{report.f1:.3f}",
         str(report.num_gt), str(report.num_det))
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for r in rows:
        out.append("  ".join(val.ljust(w) for val, w in zip(r, widths)).rstrip())
    return "\n".join(out)
