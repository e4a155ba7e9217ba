"""Central finite-difference verification of the analytic backward passes.

Checks run in float64 on the numpy kernel path so the comparison measures
the correctness of the gradient formulas rather than float32 rounding.
Offset coordinates are kept away from the integer lattice and smooth-L1
arguments away from the knee, where the operators are (by construction)
not differentiable.
"""

from __future__ import annotations

import numpy as np

from . import losses, roi
from .kernels import py_conv2d_backward, py_conv2d_forward
from .kernels import py_deform_conv2d_backward, py_deform_conv2d_forward
from .rng import STREAM_GRADCHECK, Xoshiro256, child_seed

DEFAULT_EPS = 1e-3
TOLERANCE = 1e-4
OFFSET_MARGIN = 1e-2  # min distance of offsets from the bilinear lattice
KNEE_MARGIN = 1e-2  # min distance of |t - t*| from the smooth-L1 knee


def _stream(seed: int, salt: int) -> Xoshiro256:
    return Xoshiro256(child_seed(seed, STREAM_GRADCHECK) ^ salt)


def _uniform(rng, shape, lo, hi):
    return rng.uniforms(int(np.prod(shape)), lo, hi).reshape(shape)


def _off_lattice(rng, shape):
    """Offsets whose fractional parts stay in [margin, 1 - margin]."""
    ints = np.floor(_uniform(rng, shape, -2.0, 2.0))
    frac = _uniform(rng, shape, OFFSET_MARGIN, 1.0 - OFFSET_MARGIN)
    return ints + frac


def _max_rel_err(loss_fn, params, analytic, eps):
    """Max over all scalar parameters of |analytic - numeric| / max(1e-8, |numeric|)."""
    worst = 0.0
    for arr, grad in zip(params, analytic):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn()
            flat[i] = orig - eps
            f_minus = loss_fn()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, abs(gflat[i] - numeric) / max(1e-8, abs(numeric)))
    return worst


def _check_conv2d(seed, eps, zero_probe):
    rng = _stream(seed, 1)
    x = _uniform(rng, (1, 2, 5, 5), -1, 1)
    w = _uniform(rng, (3, 2, 3, 3), -1, 1)
    b = _uniform(rng, (3,), -1, 1)
    probe = np.zeros((1, 3, 5, 5)) if zero_probe else _uniform(rng, (1, 3, 5, 5), -1, 1)

    def loss():
        return float((py_conv2d_forward(x, w, b, 1, 1) * probe).sum())

    gx, gw, gb = py_conv2d_backward(x, w, 1, 1, probe)
    return _max_rel_err(loss, [x, w, b], [gx, gw, gb], eps)


def _check_deform(seed, eps, zero_probe):
    rng = _stream(seed, 2)
    x = _uniform(rng, (1, 2, 6, 6), -1, 1)
    off = _off_lattice(rng, (1, 18, 6, 6))
    w = _uniform(rng, (2, 2, 3, 3), -1, 1)
    b = _uniform(rng, (2,), -1, 1)
    probe = np.zeros((1, 2, 6, 6)) if zero_probe else _uniform(rng, (1, 2, 6, 6), -1, 1)

    def loss():
        return float((py_deform_conv2d_forward(x, off, w, b, 1, 1) * probe).sum())

    gx, goff, gw, gb = py_deform_conv2d_backward(x, off, w, 1, 1, probe)
    return _max_rel_err(loss, [x, off, w, b], [gx, goff, gw, gb], eps)


def _check_roi(seed, eps, zero_probe):
    rng = _stream(seed, 3)
    feat = _uniform(rng, (3, 8, 8), -1, 1)
    stride = 2.0
    box = (1.7, 2.3, 11.9, 13.1)
    out_size = 4
    probe = np.zeros((3, 4, 4)) if zero_probe else _uniform(rng, (3, 4, 4), -1, 1)

    def loss():
        return float((roi.roi_extract(feat, stride, box, out_size) * probe).sum())

    gfeat = roi.roi_extract_backward(feat.shape, stride, box, out_size, probe)
    return _max_rel_err(loss, [feat], [gfeat], eps)


def _check_smooth_l1(seed, eps, zero_probe):
    rng = _stream(seed, 4)
    sigma = 3.0
    knee = 1.0 / sigma**2
    x = _uniform(rng, (16,), -2, 2)
    # push arguments away from the knee, where smooth-L1 has its kink
    near = np.abs(np.abs(x) - knee) < KNEE_MARGIN
    x[near] += 2 * KNEE_MARGIN
    x[np.abs(x) < KNEE_MARGIN] = 0.5  # stay clear of the sign kink at 0 too
    probe = np.zeros(16) if zero_probe else _uniform(rng, (16,), -1, 1)

    def loss():
        return float((losses.smooth_l1(x, sigma) * probe).sum())

    grad = losses.smooth_l1_grad(x, sigma) * probe
    return _max_rel_err(loss, [x], [grad], eps)


def _check_total_loss(seed, eps, zero_probe):
    rng = _stream(seed, 5)
    sigma = 3.0
    knee = 1.0 / sigma**2
    p = _uniform(rng, (12,), 0.1, 0.9)
    p_star = (_uniform(rng, (12,), 0, 1) < 0.5).astype(np.float64)
    diff = _uniform(rng, (6, 4), -1.5, 1.5)
    near = np.abs(np.abs(diff) - knee) < KNEE_MARGIN
    diff[near] += 2 * KNEE_MARGIN
    diff[np.abs(diff) < KNEE_MARGIN] = 0.4
    t_star = _uniform(rng, (6, 4), -1, 1)
    t = t_star + diff
    p_star_reg = (_uniform(rng, (6,), 0, 1) < 0.7).astype(np.float64)
    p_star_reg[0] = 1.0
    config = losses.LossConfig()
    scale = 0.0 if zero_probe else 1.0

    def loss():
        batch = losses.RpnBatch(p, p_star, t, t_star, p_star_reg)
        return scale * losses.total_loss(batch, config)[0]

    batch = losses.RpnBatch(p, p_star, t, t_star, p_star_reg)
    _, grad_p, grad_t = losses.total_loss(batch, config)
    return _max_rel_err(loss, [p, t], [scale * grad_p, scale * grad_t], eps)


_REGISTRY = {
    "conv2d": _check_conv2d,
    "deformable_conv2d": _check_deform,
    "roi_extract": _check_roi,
    "smooth_l1": _check_smooth_l1,
    "total_loss": _check_total_loss,
}

CHECKED_OPS = tuple(_REGISTRY)


def finite_diff_check(op: str, seed: int = 0, eps: float = DEFAULT_EPS, zero_probe: bool = False) -> float:
    """Max relative error of an op's analytic gradient vs central differences."""
    try:
        check = _REGISTRY[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; registered: {', '.join(CHECKED_OPS)}") from None
    return check(seed, eps, zero_probe)


def run_all(seed: int = 0, eps: float = DEFAULT_EPS) -> dict:
    """Errors for every registered op, in registry order."""
    return {op: finite_diff_check(op, seed, eps) for op in CHECKED_OPS}
