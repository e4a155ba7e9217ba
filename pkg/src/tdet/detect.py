"""Inference: RPN proposals, RoI classification, per-class NMS, overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import roi
from .anchors import AnchorSet, generate_anchors
from .boxes import clip_boxes, decode_boxes
from .checkpoint import load_checkpoint
from .config import RunConfig
from .data import write_detections_csv, write_provenance
from .model import Detector
from .nms import nms
from .pnm import to_float, write_pnm

MIN_PROPOSAL_SIZE = 1.0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def image_to_tensor(img: np.ndarray) -> np.ndarray:
    """uint8 (H, W[, 3]) -> float32 (1, 3, H, W); grayscale replicates."""
    work = to_float(img)
    if work.ndim == 2:
        work = np.stack([work] * 3, axis=-1)
    return np.ascontiguousarray(work.transpose(2, 0, 1)[None])


def gather_rpn_predictions(rpn_outputs, anchor_set: AnchorSet):
    """Flatten RPN maps into per-anchor (scores, deltas) in anchor order."""
    num_ratios = anchor_set.num_ratios
    scores = []
    deltas = []
    for logits, delta_map in rpn_outputs:
        a = num_ratios
        scores.append(logits[0].transpose(1, 2, 0).reshape(-1))
        h, w = delta_map.shape[2:]
        deltas.append(delta_map[0].reshape(a, 4, h, w).transpose(2, 3, 0, 1).reshape(-1, 4))
    return np.concatenate(scores), np.concatenate(deltas)


def generate_proposals(rpn_outputs, anchor_set: AnchorSet, image_hw, pre_nms: int,
                       post_nms: int, nms_iou: float):
    """Decode, clip, take per-level top-k, then class-agnostic NMS."""
    h, w = image_hw
    logit_flat, delta_flat = gather_rpn_predictions(rpn_outputs, anchor_set)
    scores = _sigmoid(logit_flat.astype(np.float64))
    boxes = clip_boxes(decode_boxes(anchor_set.boxes, delta_flat), w, h)

    cand = np.arange(len(anchor_set))
    sizes_ok = (boxes[:, 2] - boxes[:, 0] >= MIN_PROPOSAL_SIZE) & (
        boxes[:, 3] - boxes[:, 1] >= MIN_PROPOSAL_SIZE
    )
    cand = cand[sizes_ok]
    if cand.size > pre_nms:
        order = np.argsort(-scores[cand], kind="stable")[:pre_nms]
        cand = cand[order]
    if cand.size == 0:
        return np.zeros((0, 4), np.float32), np.zeros(0)

    kept = nms(boxes[cand], scores[cand], None, nms_iou, max_keep=post_nms)
    sel = cand[kept]
    return boxes[sel], scores[sel]


def detect_image(det: Detector, x: np.ndarray, cfg: RunConfig):
    """Full single-image inference.

    Returns (boxes (K, 4), class_ids (K,), scores (K,)) with dataset class
    ids (background removed), clipped to the image.
    """
    h, w = x.shape[2], x.shape[3]
    state = det.forward(x)
    anchor_set = generate_anchors(det.config.anchor_levels(h, w), det.config.ratios)
    proposals, _ = generate_proposals(
        state.rpn_outputs, anchor_set, (h, w), cfg.proposal_pre_nms,
        cfg.proposal_post_nms, cfg.proposal_nms_iou,
    )
    if proposals.shape[0] == 0:
        return np.zeros((0, 4), np.float32), np.zeros(0, np.int64), np.zeros(0)

    strides = det.config.pyramid_strides()
    feats, _ = roi.roi_extract_batch(
        [p[0] for p in state.pyramid], strides, proposals, det.config.roi_size
    )
    probs, deltas, _ = det.head_forward(feats)

    all_boxes, all_cls, all_scores = [], [], []
    for c in range(1, det.config.num_classes + 1):
        score_c = probs[:, c]
        keep = score_c >= cfg.detect_score_min
        if not keep.any():
            continue
        decoded = decode_boxes(proposals[keep], deltas[keep, 4 * (c - 1) : 4 * c])
        decoded = clip_boxes(decoded, w, h)
        ok = (decoded[:, 2] - decoded[:, 0] > 0) & (decoded[:, 3] - decoded[:, 1] > 0)
        all_boxes.append(decoded[ok])
        all_cls.append(np.full(int(ok.sum()), c - 1, np.int64))
        all_scores.append(score_c[keep][ok])

    if not all_boxes:
        return np.zeros((0, 4), np.float32), np.zeros(0, np.int64), np.zeros(0)
    boxes = np.concatenate(all_boxes)
    cls = np.concatenate(all_cls)
    scores = np.concatenate(all_scores)
    kept = nms(boxes, scores, cls, cfg.detect_nms_iou)[: cfg.detect_max_dets]
    return boxes[kept], cls[kept], scores[kept]


def run_detection(checkpoint_path, images, cfg: RunConfig, out_dir, overlay: bool = False):
    """Detect over (name, uint8 image) pairs; writes detections.csv.

    Returns the detection rows. With ``overlay`` set, also writes P6
    copies with 1-px box outlines and burned-in class labels.
    """
    params, model_config = load_checkpoint(checkpoint_path)
    det = Detector(model_config, params)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, img in images:
        x = image_to_tensor(img)
        boxes, cls, scores = detect_image(det, x, cfg)
        for b, c, s in zip(boxes, cls, scores):
            rows.append((name, int(c), float(s), float(b[0]), float(b[1]), float(b[2]), float(b[3])))
        if overlay:
            overlay_dir = out_dir / "overlays"
            overlay_dir.mkdir(exist_ok=True)
            write_pnm(overlay_dir / _as_ppm_name(name), render_overlay(img, boxes, cls))
    write_detections_csv(out_dir / "detections.csv", rows)
    write_provenance(
        out_dir,
        {"command": "detect", "seed": cfg.seed, "config_sha256": cfg.config_hash(),
         "checkpoint": Path(checkpoint_path).name},
    )
    return rows


def _as_ppm_name(name: str) -> str:
    stem = name.rsplit(".", 1)[0]
    return f"{stem}.ppm"


_PALETTE = ((255, 80, 80), (80, 220, 80), (90, 140, 255), (240, 220, 60), (220, 90, 220))

_DIGITS = {  # 3x5 bitmap font for class-id labels
    "0": "111101101101111", "1": "010110010010111", "2": "111001111100111",
    "3": "111001111001111", "4": "101101111001001", "5": "111100111001111",
    "6": "111100111101111", "7": "111001010010010", "8": "111101111101111",
    "9": "111101111001111",
}


def render_overlay(img: np.ndarray, boxes, class_ids) -> np.ndarray:
    """Burn 1-px box outlines and class-id digits into an RGB copy."""
    if img.ndim == 2:
        canvas = np.stack([img] * 3, axis=-1).astype(np.uint8)
    else:
        canvas = img.astype(np.uint8).copy()
    h, w = canvas.shape[:2]
    for box, cls in zip(boxes, class_ids):
        color = np.array(_PALETTE[int(cls) % len(_PALETTE)], np.uint8)
        x1 = int(np.clip(np.floor(box[0]), 0, w - 1))
        y1 = int(np.clip(np.floor(box[1]), 0, h - 1))
        x2 = int(np.clip(np.ceil(box[2]) - 1, 0, w - 1))
        y2 = int(np.clip(np.ceil(box[3]) - 1, 0, h - 1))
        canvas[y1, x1 : x2 + 1] = color
        canvas[y2, x1 : x2 + 1] = color
        canvas[y1 : y2 + 1, x1] = color
        canvas[y1 : y2 + 1, x2] = color
        _burn_label(canvas, str(int(cls)), x1 + 2, y1 + 2, color)
    return canvas


def _burn_label(canvas, text, x0, y0, color):
    h, w = canvas.shape[:2]
    for k, ch in enumerate(text):
        glyph = _DIGITS.get(ch)
        if glyph is None:
            continue
        for i in range(5):
            for j in range(3):
                if glyph[i * 3 + j] == "1":
                    y, x = y0 + i, x0 + k * 4 + j
                    if 0 <= y < h and 0 <= x < w:
                        canvas[y, x] = color
