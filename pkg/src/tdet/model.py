"""The toy detector: a 3-stage backbone with deformable blocks, a 3-level
feature pyramid, a shared RPN head and a two-branch classification /
box-regression head.

Offset branches are zero-initialized, so a freshly initialized deformable
model computes exactly what its regular-convolution ablation computes;
the offsets only bend the sampling grid once training moves them. All
forward passes keep explicit tapes so the matching ``backward_*`` methods
can run without an autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .rng import STREAM_INIT, Xoshiro256Vec, child_seed


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    ratios: tuple = (0.5, 1.0, 2.0)
    deformable: bool = True
    fpn: bool = True
    stage_channels: tuple = (16, 32, 64)
    pyr_channels: int = 32
    fc_width: int = 256
    roi_size: int = 7
    strides: tuple = (4, 8, 16)
    base_scales: tuple = (16, 32, 64)
    single_base_scale: int = 32

    @property
    def num_anchors(self) -> int:
        return len(self.ratios)

    def pyramid_strides(self) -> tuple:
        return self.strides if self.fpn else (self.strides[-1],)

    def anchor_levels(self, image_h: int, image_w: int) -> list:
        """(stride, base_scale, grid_h, grid_w) rows for anchor generation."""
        if self.fpn:
            return [
                (s, b, image_h // s, image_w // s)
                for s, b in zip(self.strides, self.base_scales)
            ]
        s = self.strides[-1]
        return [(s, self.single_base_scale, image_h // s, image_w // s)]


def _offset_channels() -> int:
    return 2 * 3 * 3  # all deformable convolutions here are 3x3


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Fan-in-scaled normal weights, zero biases, zero offset branches."""
    rng = Xoshiro256Vec(child_seed(seed, STREAM_INIT))

    params: dict[str, np.ndarray] = {}

    def conv(name, co, ci, k):
        fan_in = ci * k * k
        std = math.sqrt(2.0 / fan_in)
        w = rng.normals(co * ci * k * k).reshape(co, ci, k, k) * std
        params[f"{name}.w"] = w.astype(np.float32)
        params[f"{name}.b"] = np.zeros(co, dtype=np.float32)

    def zero_conv(name, co, ci, k):
        params[f"{name}.w"] = np.zeros((co, ci, k, k), dtype=np.float32)
        params[f"{name}.b"] = np.zeros(co, dtype=np.float32)

    def fc(name, out_dim, in_dim):
        std = math.sqrt(2.0 / in_dim)
        w = rng.normals(out_dim * in_dim).reshape(out_dim, in_dim) * std
        params[f"{name}.w"] = w.astype(np.float32)
        params[f"{name}.b"] = np.zeros(out_dim, dtype=np.float32)

    c1, c2, c3 = config.stage_channels
    conv("backbone.conv1", c1, 3, 3)
    conv("backbone.conv2", c1, c1, 3)
    conv("backbone.conv3", c2, c1, 3)
    conv("backbone.conv4", c3, c2, 3)
    if config.deformable:
        zero_conv("backbone.conv3_off", _offset_channels(), c1, 3)
        zero_conv("backbone.conv4_off", _offset_channels(), c2, 3)

    p = config.pyr_channels
    conv("fpn.lateral2", p, c3, 1)
    conv("fpn.smooth2", p, p, 3)
    if config.fpn:
        conv("fpn.lateral0", p, c1, 1)
        conv("fpn.lateral1", p, c2, 1)
        conv("fpn.smooth0", p, p, 3)
        conv("fpn.smooth1", p, p, 3)

    conv("rpn.conv", p, p, 3)
    if config.deformable:
        zero_conv("rpn.conv_off", _offset_channels(), p, 3)
    conv("rpn.cls", config.num_anchors, p, 1)
    conv("rpn.reg", 4 * config.num_anchors, p, 1)

    fc("head.fc1", config.fc_width, p * config.roi_size * config.roi_size)
    fc("head.cls", config.num_classes + 1, config.fc_width)
    fc("head.reg", 4 * config.num_classes, config.fc_width)
    return params


def upsample2_nearest(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_nearest_backward(grad: np.ndarray) -> np.ndarray:
    b, c, h, w = grad.shape
    return grad.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardState:
    """Inputs and intermediates of one forward pass, consumed by backward."""

    x: np.ndarray = None
    backbone: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    fpn: dict = field(default_factory=dict)
    pyramid: list = field(default_factory=list)
    rpn: list = field(default_factory=list)
    rpn_outputs: list = field(default_factory=list)


class Detector:
    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    # -- building blocks ---------------------------------------------------

    def _conv_block(self, x, name, stride, pad, deformable, tape):
        w = self.params[f"{name}.w"]
        b = self.params[f"{name}.b"]
        if deformable:
            off = ops.conv2d(
                x, self.params[f"{name}_off.w"], self.params[f"{name}_off.b"], stride, pad
            )
            z = ops.deform_conv2d(x, off, w, b, stride, pad)
        else:
            off = None
            z = ops.conv2d(x, w, b, stride, pad)
        tape[name] = {"x": x, "off": off, "z": z, "stride": stride, "pad": pad,
                      "deformable": deformable}
        return ops.relu(z)

    def _conv_block_backward(self, name, grad_out, tape, grads):
        entry = tape[name]
        gz = ops.relu_backward(entry["z"], grad_out)
        w = self.params[f"{name}.w"]
        if entry["deformable"]:
            gx, goff, gw, gb = ops.deform_conv2d_backward(
                entry["x"], entry["off"], w, gz, entry["stride"], entry["pad"]
            )
            gxo, gwo, gbo = ops.conv2d_backward(
                entry["x"], self.params[f"{name}_off.w"], goff, entry["stride"], entry["pad"]
            )
            gx = gx + gxo
            _accum(grads, f"{name}_off.w", gwo)
            _accum(grads, f"{name}_off.b", gbo)
        else:
            gx, gw, gb = ops.conv2d_backward(entry["x"], w, gz, entry["stride"], entry["pad"])
        _accum(grads, f"{name}.w", gw)
        _accum(grads, f"{name}.b", gb)
        return gx

    # -- backbone ------------------------------------------------------------

    def backbone_forward(self, x, state: ForwardState):
        """Three stages at strides 4/8/16; the last two are deformable."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[2] % 16 or x.shape[3] % 16:
            raise ops.ShapeError(
                f"backbone input must be (B, C, H, W) with H, W divisible by 16, got {x.shape}"
            )
        state.x = x
        tape = state.backbone
        dc = self.config.deformable
        x = x - np.asarray(0.5, dtype=x.dtype)  # center [0,1] pixel inputs
        c1 = self._conv_block(x, "backbone.conv1", 2, 1, False, tape)
        c2 = self._conv_block(c1, "backbone.conv2", 2, 1, False, tape)
        c3 = self._conv_block(c2, "backbone.conv3", 2, 1, dc, tape)
        c4 = self._conv_block(c3, "backbone.conv4", 2, 1, dc, tape)
        state.stages = [c2, c3, c4]
        return state.stages

    def backbone_backward(self, grad_stages, state: ForwardState, grads):
        g4 = grad_stages[2]
        g3 = grad_stages[1] + self._conv_block_backward("backbone.conv4", g4, state.backbone, grads)
        g2 = grad_stages[0] + self._conv_block_backward("backbone.conv3", g3, state.backbone, grads)
        g1 = self._conv_block_backward("backbone.conv2", g2, state.backbone, grads)
        self._conv_block_backward("backbone.conv1", g1, state.backbone, grads)

    # -- feature pyramid -----------------------------------------------------

    def fpn_forward(self, stages, state: ForwardState):
        """Top-down pathway; without FPN, a single projected coarse level."""
        p = self.params
        tape = state.fpn
        laterals = {}
        merged = {}
        laterals[2] = ops.conv2d(stages[2], p["fpn.lateral2.w"], p["fpn.lateral2.b"])
        if self.config.fpn:
            laterals[0] = ops.conv2d(stages[0], p["fpn.lateral0.w"], p["fpn.lateral0.b"])
            laterals[1] = ops.conv2d(stages[1], p["fpn.lateral1.w"], p["fpn.lateral1.b"])
            merged[2] = laterals[2]
            merged[1] = laterals[1] + upsample2_nearest(merged[2])
            merged[0] = laterals[0] + upsample2_nearest(merged[1])
            pyramid = [
                ops.conv2d(merged[i], p[f"fpn.smooth{i}.w"], p[f"fpn.smooth{i}.b"], 1, 1)
                for i in range(3)
            ]
        else:
            merged[2] = laterals[2]
            pyramid = [ops.conv2d(merged[2], p["fpn.smooth2.w"], p["fpn.smooth2.b"], 1, 1)]
        tape["stages"] = stages
        tape["merged"] = merged
        state.pyramid = pyramid
        return pyramid

    def fpn_backward(self, grad_pyramid, state: ForwardState, grads):
        p = self.params
        tape = state.fpn
        stages = tape["stages"]
        merged = tape["merged"]
        zeros = [np.zeros_like(s) for s in stages]

        def smooth_back(i, g):
            gx, gw, gb = ops.conv2d_backward(merged[i], p[f"fpn.smooth{i}.w"], g, 1, 1)
            _accum(grads, f"fpn.smooth{i}.w", gw)
            _accum(grads, f"fpn.smooth{i}.b", gb)
            return gx

        def lateral_back(i, g):
            gx, gw, gb = ops.conv2d_backward(stages[i], p[f"fpn.lateral{i}.w"], g, 1, 0)
            _accum(grads, f"fpn.lateral{i}.w", gw)
            _accum(grads, f"fpn.lateral{i}.b", gb)
            return gx

        if not self.config.fpn:
            gm2 = smooth_back(2, grad_pyramid[0])
            zeros[2] = lateral_back(2, gm2)
            return zeros

        gm0 = smooth_back(0, grad_pyramid[0])
        gm1 = smooth_back(1, grad_pyramid[1]) + upsample2_nearest_backward(gm0)
        gm2 = smooth_back(2, grad_pyramid[2]) + upsample2_nearest_backward(gm1)
        zeros[0] = lateral_back(0, gm0)
        zeros[1] = lateral_back(1, gm1)
        zeros[2] = lateral_back(2, gm2)
        return zeros

    # -- region proposal head --------------------------------------------------

    def rpn_forward(self, pyramid, state: ForwardState):
        """Shared 3x3 conv + relu, then sibling 1x1 objectness / delta convs."""
        outputs = []
        state.rpn = []
        for level in pyramid:
            tape = {}
            hid = self._conv_block(level, "rpn.conv", 1, 1, self.config.deformable, tape)
            logits = ops.conv2d(hid, self.params["rpn.cls.w"], self.params["rpn.cls.b"])
            deltas = ops.conv2d(hid, self.params["rpn.reg.w"], self.params["rpn.reg.b"])
            tape["hid"] = hid
            state.rpn.append(tape)
            outputs.append((logits, deltas))
        state.rpn_outputs = outputs
        return outputs

    def rpn_backward(self, grad_outputs, state: ForwardState, grads):
        grad_pyramid = []
        for tape, (g_logits, g_deltas) in zip(state.rpn, grad_outputs):
            hid = tape["hid"]
            gx_c, gw_c, gb_c = ops.conv2d_backward(hid, self.params["rpn.cls.w"], g_logits)
            gx_r, gw_r, gb_r = ops.conv2d_backward(hid, self.params["rpn.reg.w"], g_deltas)
            _accum(grads, "rpn.cls.w", gw_c)
            _accum(grads, "rpn.cls.b", gb_c)
            _accum(grads, "rpn.reg.w", gw_r)
            _accum(grads, "rpn.reg.b", gb_r)
            grad_pyramid.append(self._conv_block_backward("rpn.conv", gx_c + gx_r, tape, grads))
        return grad_pyramid

    # -- detection head ---------------------------------------------------------

    def head_forward(self, roi_features):
        """(N, C, 7, 7) roi features -> (class probabilities, per-class deltas, tape)."""
        cfg = self.config
        n = roi_features.shape[0]
        expect = (cfg.pyr_channels, cfg.roi_size, cfg.roi_size)
        if tuple(roi_features.shape[1:]) != expect:
            raise ops.ShapeError(f"roi features must be (N, {expect}), got {roi_features.shape}")
        p = self.params
        flat = roi_features.reshape(n, -1)
        h1 = flat @ p["head.fc1.w"].T + p["head.fc1.b"]
        a1 = ops.relu(h1)
        cls_logits = a1 @ p["head.cls.w"].T + p["head.cls.b"]
        probs = _softmax_rows(cls_logits)
        deltas = a1 @ p["head.reg.w"].T + p["head.reg.b"]
        tape = {"flat": flat, "h1": h1, "a1": a1, "cls_logits": cls_logits,
                "shape": roi_features.shape}
        return probs, deltas, tape

    def head_backward(self, grad_cls_logits, grad_deltas, tape, grads):
        p = self.params
        a1 = tape["a1"]
        _accum(grads, "head.cls.w", grad_cls_logits.T @ a1)
        _accum(grads, "head.cls.b", grad_cls_logits.sum(axis=0))
        _accum(grads, "head.reg.w", grad_deltas.T @ a1)
        _accum(grads, "head.reg.b", grad_deltas.sum(axis=0))
        g_a1 = grad_cls_logits @ p["head.cls.w"] + grad_deltas @ p["head.reg.w"]
        g_h1 = ops.relu_backward(tape["h1"], g_a1)
        _accum(grads, "head.fc1.w", g_h1.T @ tape["flat"])
        _accum(grads, "head.fc1.b", g_h1.sum(axis=0))
        g_flat = g_h1 @ p["head.fc1.w"]
        return g_flat.reshape(tape["shape"])

    # -- whole network ------------------------------------------------------------

    def forward(self, x) -> ForwardState:
        state = ForwardState()
        stages = self.backbone_forward(x, state)
        pyramid = self.fpn_forward(stages, state)
        self.rpn_forward(pyramid, state)
        return state


def _accum(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = np.array(g, copy=True)
