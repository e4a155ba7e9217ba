"""Single-image-batch training loop.

Each step runs the full forward pass, matches anchors at the RPN
thresholds (0.7 positive / 0.3 negative) and proposals at the head
threshold (0.5), samples fixed-size minibatches, applies the joint
classification + smooth-L1 loss to both stages, backpropagates through
the whole network and takes one Adam step. Non-finite losses skip the
update; ten consecutive skips abort the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import roi
from .adam import AdamState, adam_step
from .anchors import match_anchors, generate_anchors
from .boxes import encode_boxes
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import Manifest, write_provenance
from .detect import gather_rpn_predictions, generate_proposals, image_to_tensor
from .losses import LossConfig, RpnBatch, classification_loss, smooth_l1_grad
from .losses import regression_loss, softmax_cross_entropy, total_loss
from .model import Detector, ModelConfig
from .rng import STREAM_TRAIN, Xoshiro256, child_seed

RPN_POS_IOU = 0.7
RPN_NEG_IOU = 0.3
HEAD_POS_IOU = 0.5
RPN_BATCH = 64
RPN_MAX_POS = 32
HEAD_BATCH = 32
HEAD_MAX_POS = 8
MAX_NAN_SKIPS = 10


class TrainingDivergence(RuntimeError):
    """Raised when the loss stays non-finite for MAX_NAN_SKIPS steps."""


@dataclass
class StepLosses:
    total: float
    cls: float
    reg: float


def _sample(rng, indices: np.ndarray, count: int) -> np.ndarray:
    if indices.size <= count:
        return indices
    pick = rng.choice_no_replace(indices.size, count)
    return indices[pick]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def rpn_targets_and_grads(det, state, anchor_set, gt_boxes, rng, loss_cfg):
    """Sampled RPN loss; returns (cls_loss, reg_loss, per-level grad maps)."""
    match = match_anchors(anchor_set.boxes, gt_boxes, RPN_POS_IOU, RPN_NEG_IOU)
    pos = _sample(rng, match.positives, RPN_MAX_POS)
    neg = _sample(rng, match.negatives, RPN_BATCH - pos.size)
    sampled = np.concatenate([pos, neg])

    logit_flat, delta_flat = gather_rpn_predictions(state.rpn_outputs, anchor_set)
    logits = logit_flat[sampled].astype(np.float64)
    p = _sigmoid(logits)
    p_star = np.zeros(sampled.size)
    p_star[: pos.size] = 1.0

    if pos.size:
        t = delta_flat[pos]
        t_star = match.t_star[pos]
        gate = np.ones(pos.size)
    else:
        t = np.zeros((1, 4))
        t_star = np.zeros((1, 4))
        gate = np.zeros(1)
    batch = RpnBatch(p, p_star, t, t_star, p_star_reg=gate)
    _, grad_p, grad_t = total_loss(batch, loss_cfg)
    cls = classification_loss(p, p_star)
    reg = regression_loss(t, t_star, gate, config=loss_cfg)

    grad_logit = grad_p * p * (1.0 - p)  # chain through the sigmoid
    grad_maps = [
        (np.zeros_like(l), np.zeros_like(d)) for l, d in state.rpn_outputs
    ]
    for row, a_idx in enumerate(sampled):
        lvl = anchor_set.level[a_idx]
        iy, ix, r = anchor_set.iy[a_idx], anchor_set.ix[a_idx], anchor_set.ridx[a_idx]
        grad_maps[lvl][0][0, r, iy, ix] += grad_logit[row]
    for row, a_idx in enumerate(pos):
        lvl = anchor_set.level[a_idx]
        iy, ix, r = anchor_set.iy[a_idx], anchor_set.ix[a_idx], anchor_set.ridx[a_idx]
        grad_maps[lvl][1][0, 4 * r : 4 * r + 4, iy, ix] += grad_t[row]
    return cls, reg, grad_maps


GT_JITTER_COPIES = 4
GT_JITTER_FRAC = 0.15


def _jittered_gt(gt_boxes, rng, image_hw):
    """Perturbed copies of the ground-truth boxes.

    Appended to the training proposal pool so the head sees positives with
    nonzero regression targets even while the RPN is still warming up.
    """
    h, w = image_hw
    out = []
    for box in gt_boxes:
        bw = box[2] - box[0]
        bh = box[3] - box[1]
        for _ in range(GT_JITTER_COPIES):
            dx = rng.uniform(-GT_JITTER_FRAC, GT_JITTER_FRAC) * bw
            dy = rng.uniform(-GT_JITTER_FRAC, GT_JITTER_FRAC) * bh
            sw = np.exp(rng.uniform(-GT_JITTER_FRAC, GT_JITTER_FRAC))
            sh = np.exp(rng.uniform(-GT_JITTER_FRAC, GT_JITTER_FRAC))
            cx = (box[0] + box[2]) / 2 + dx
            cy = (box[1] + box[3]) / 2 + dy
            nb = np.array(
                [cx - sw * bw / 2, cy - sh * bh / 2, cx + sw * bw / 2, cy + sh * bh / 2],
                dtype=np.float32,
            )
            nb[0::2] = np.clip(nb[0::2], 0.0, w)
            nb[1::2] = np.clip(nb[1::2], 0.0, h)
            if nb[2] - nb[0] >= 2.0 and nb[3] - nb[1] >= 2.0:
                out.append(nb)
    return np.array(out, dtype=np.float32).reshape(-1, 4)


def head_targets_and_grads(det, state, proposals, gt_boxes, gt_classes, rng, loss_cfg, grads,
                           image_hw):
    """Sampled head loss; backpropagates into the pyramid gradient maps.

    Returns (cls_loss, reg_loss, grad_pyramid).
    """
    cfg = det.config
    strides = cfg.pyramid_strides()
    if gt_boxes.shape[0]:
        proposals = np.concatenate(
            [proposals, gt_boxes.astype(np.float32), _jittered_gt(gt_boxes, rng, image_hw)]
        )
    if proposals.shape[0] == 0:
        return 0.0, 0.0, [np.zeros_like(p) for p in state.pyramid]
    match = match_anchors(proposals, gt_boxes, HEAD_POS_IOU, HEAD_POS_IOU)
    pos = _sample(rng, match.positives, HEAD_MAX_POS)
    neg = _sample(rng, match.negatives, HEAD_BATCH - pos.size)
    sampled = np.concatenate([pos, neg]).astype(np.int64)
    if sampled.size == 0:
        return 0.0, 0.0, [np.zeros_like(p) for p in state.pyramid]

    labels = np.zeros(sampled.size, dtype=np.int64)
    labels[: pos.size] = gt_classes[match.gt_index[pos]] + 1  # background is class 0

    level_maps = [p[0] for p in state.pyramid]
    feats, levels = roi.roi_extract_batch(level_maps, strides, proposals[sampled], cfg.roi_size)
    probs, deltas, tape = det.head_forward(feats)
    cls_logits = tape["cls_logits"]

    cls_loss, grad_logits = softmax_cross_entropy(cls_logits, labels)
    grad_logits = grad_logits.astype(np.float32)

    grad_deltas = np.zeros_like(deltas, dtype=np.float32)
    if pos.size:
        rows = np.arange(pos.size)
        cols = labels[: pos.size] - 1
        t_pred = np.stack([deltas[r, 4 * c : 4 * c + 4] for r, c in zip(rows, cols)])
        t_star = encode_boxes(proposals[pos], gt_boxes[match.gt_index[pos]])
        n_r = pos.size
        reg_loss = regression_loss(t_pred, t_star, np.ones(n_r), config=loss_cfg)
        gt_grad = loss_cfg.alpha * smooth_l1_grad(
            t_pred.astype(np.float64) - t_star, loss_cfg.sigma
        ) / n_r
        for r, c, g in zip(rows, cols, gt_grad):
            grad_deltas[r, 4 * c : 4 * c + 4] = g
    else:
        reg_loss = 0.0

    g_feats = det.head_backward(grad_logits, grad_deltas, tape, grads)
    grad_pyramid = [np.zeros_like(p) for p in state.pyramid]
    g_levels = roi.roi_backward_batch(
        [m.shape for m in level_maps], strides, proposals[sampled], levels,
        cfg.roi_size, g_feats,
    )
    for lvl, g in enumerate(g_levels):
        grad_pyramid[lvl][0] += g
    return cls_loss, reg_loss, grad_pyramid


def train_step(det, sample, anchor_set, rng, run_cfg: RunConfig, loss_cfg, adam_state):
    """One optimization step on one image; returns StepLosses."""
    x, gt_boxes, gt_classes = sample
    h, w = x.shape[2], x.shape[3]
    state = det.forward(x)
    grads: dict = {}

    rpn_cls, rpn_reg, rpn_grad_maps = rpn_targets_and_grads(
        det, state, anchor_set, gt_boxes, rng, loss_cfg
    )
    proposals, _ = generate_proposals(
        state.rpn_outputs, anchor_set, (h, w), run_cfg.proposal_pre_nms,
        run_cfg.proposal_post_nms, run_cfg.proposal_nms_iou,
    )
    head_cls, head_reg, grad_pyramid = head_targets_and_grads(
        det, state, proposals, gt_boxes, gt_classes, rng, loss_cfg, grads, (h, w)
    )

    total = rpn_cls + rpn_reg + head_cls + head_reg
    if not np.isfinite(total):
        return StepLosses(total=float(total), cls=float(rpn_cls + head_cls),
                          reg=float(rpn_reg + head_reg))

    for gp, grpn in zip(grad_pyramid, det.rpn_backward(rpn_grad_maps, state, grads)):
        gp += grpn
    grad_stages = det.fpn_backward(grad_pyramid, state, grads)
    det.backbone_backward(grad_stages, state, grads)
    adam_step(det.params, grads, adam_state)
    return StepLosses(total=float(total), cls=float(rpn_cls + head_cls),
                      reg=float(rpn_reg + head_reg))


def load_training_samples(manifest: Manifest):
    """Materialize (tensor, gt_boxes, gt_classes) for every image."""
    samples = []
    size = None
    for name in manifest.image_names:
        img = manifest.load_image(name)
        if img.shape[0] % 16 or img.shape[1] % 16:
            raise ValueError(f"{name}: image dims must be divisible by 16, got {img.shape[:2]}")
        if size is None:
            size = img.shape[:2]
        elif img.shape[:2] != size:
            raise ValueError("training images must share one size")
        anns = manifest.boxes_for(name)
        gt_boxes = np.array([a.as_array() for a in anns], dtype=np.float32).reshape(-1, 4)
        gt_classes = np.array([a.class_id for a in anns], dtype=np.int64)
        samples.append((image_to_tensor(img), gt_boxes, gt_classes))
    return samples, size


def run_training(cfg: RunConfig, manifest: Manifest, out_dir):
    """Train per the run config; writes checkpoint.tdet, train_log.csv and
    provenance. Returns the log rows as (step, total, cls, reg)."""
    if cfg.train_steps < 1:
        raise ValueError("train.steps must be >= 1")
    samples, (h, w) = load_training_samples(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_config = ModelConfig(
        num_classes=manifest.num_classes,
        deformable=cfg.model_deformable,
        fpn=cfg.model_fpn,
    )
    det = Detector(model_config, seed=cfg.seed)
    anchor_set = generate_anchors(model_config.anchor_levels(h, w), model_config.ratios)
    loss_cfg = LossConfig(alpha=cfg.loss_alpha, sigma=cfg.loss_sigma)
    adam_state = AdamState(lr=cfg.train_lr)
    rng = Xoshiro256(child_seed(cfg.seed, STREAM_TRAIN))

    rows = []
    skips = 0
    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", encoding="ascii") as log:
        log.write("step,total_loss,cls_loss,reg_loss\n")
        for step in range(1, cfg.train_steps + 1):
            sample = samples[rng.randint(len(samples))]
            losses_out = train_step(det, sample, anchor_set, rng, cfg, loss_cfg, adam_state)
            log.write(
                f"{step},{losses_out.total:.6f},{losses_out.cls:.6f},{losses_out.reg:.6f}\n"
            )
            log.flush()
            rows.append((step, losses_out.total, losses_out.cls, losses_out.reg))
            if not np.isfinite(losses_out.total):
                skips += 1
                if skips >= MAX_NAN_SKIPS:
                    raise TrainingDivergence(
                        f"loss non-finite for {skips} consecutive steps at step {step}"
                    )
            else:
                skips = 0

    save_checkpoint(out_dir / "checkpoint.tdet", det.params, model_config)
    write_provenance(
        out_dir,
        {"command": "train", "seed": cfg.seed, "config_sha256": cfg.config_hash(),
         "steps": cfg.train_steps, "dataset": str(manifest.root)},
    )
    return rows
