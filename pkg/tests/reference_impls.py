"""Independent brute-force oracles used by the test suite.

Everything here is written as plainly as possible (scalar loops, float64)
and deliberately shares no code with the package internals it checks.
"""

import math

import numpy as np


def naive_conv2d(x, w, bias, stride, pad):
    """Quadruple-loop direct summation, float64 accumulation."""
    b, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, co, ho, wo), dtype=np.float64)
    for ib in range(b):
        for io in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(ci):
                        for iy in range(kh):
                            for ix in range(kw):
                                yy = oy * stride - pad + iy
                                xx = ox * stride - pad + ix
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += float(w[io, ic, iy, ix]) * float(x[ib, ic, yy, xx])
                    out[ib, io, oy, ox] = acc + (float(bias[io]) if bias is not None else 0.0)
    return out


def naive_bilinear(plane, x, y):
    """Four-corner interpolation with zero outside the plane."""
    h, w = plane.shape
    x0 = math.floor(x)
    y0 = math.floor(y)
    fx = x - x0
    fy = y - y0

    def at(yy, xx):
        return float(plane[yy, xx]) if 0 <= yy < h and 0 <= xx < w else 0.0

    return (
        (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
        + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
    )


def naive_deform_conv2d(x, off, w, bias, stride, pad):
    """Direct per-output-element evaluation of the offset convolution sum."""
    b, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = off.shape[2], off.shape[3]
    out = np.zeros((b, co, ho, wo), dtype=np.float64)
    for ib in range(b):
        for io in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(ci):
                        for iy in range(kh):
                            for ix in range(kw):
                                t = iy * kw + ix
                                px = ox * stride - pad + ix + float(off[ib, 2 * t, oy, ox])
                                py = oy * stride - pad + iy + float(off[ib, 2 * t + 1, oy, ox])
                                acc += float(w[io, ic, iy, ix]) * naive_bilinear(
                                    x[ib, ic], px, py
                                )
                    out[ib, io, oy, ox] = acc + (float(bias[io]) if bias is not None else 0.0)
    return out


def naive_nms(boxes, scores, class_ids, iou_thresh):
    """Exhaustive greedy suppression; returns kept indices, score-descending."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        ok = True
        for j in kept:
            if class_ids[j] != class_ids[i]:
                continue
            if naive_iou(boxes[i], boxes[j]) > iou_thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def naive_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def naive_average_precision(tp_flags, n_gt):
    """All-points AP with the monotone precision envelope, spelled out.

    ``tp_flags`` must already be ordered by descending score.
    """
    if n_gt < 1:
        raise ValueError("needs at least one ground truth")
    recalls = [0.0]
    precisions = [1.0]
    tp = 0
    for i, flag in enumerate(tp_flags):
        if flag:
            tp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (i + 1))
    # Envelope: precision at recall r is the max precision at recall >= r.
    env = precisions[:]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap = 0.0
    for i in range(1, len(recalls)):
        ap += (recalls[i] - recalls[i - 1]) * env[i]
    return ap


def naive_greedy_match(dets, gts, iou_thresh):
    """Per-image greedy TP/FP assignment.

    ``dets``: list of (class_id, score, box) already sorted by descending
    score; ``gts``: list of (class_id, box). Returns TP flags.
    """
    used = [False] * len(gts)
    flags = []
    for cls, _score, box in dets:
        best = -1
        best_iou = 0.0
        for gi, (gcls, gbox) in enumerate(gts):
            if gcls != cls or used[gi]:
                continue
            v = naive_iou(box, gbox)
            if v >= iou_thresh and v > best_iou:
                best = gi
                best_iou = v
        if best >= 0:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags
