"""Dense-tensor operators: regular and deformable convolution, bilinear
sampling and activations, each with an analytic backward pass.

Tensors are numpy arrays in (batch, channel, height, width) layout,
float32 on the product path. Offset fields carry one (dx, dy) channel pair
per kernel tap, so their channel count is 2*kh*kw and their spatial dims
equal the convolution output's. All operators are pure functions.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand dimensions are inconsistent."""


def _as_input(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a rank-4 (B, C, H, W) tensor, got rank {x.ndim}")
    return np.ascontiguousarray(x)


def _check_conv_args(x, w, bias, stride, pad):
    if w.ndim != 4:
        raise ShapeError(f"weights must be rank-4, got rank {w.ndim}")
    co, ci, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
    if x.shape[1] != ci:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {ci}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"bias must have shape ({co},), got {bias.shape}")
    ho = (x.shape[2] + 2 * pad - kh) // stride + 1
    wo = (x.shape[3] + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")
    return ho, wo


def conv_output_shape(in_hw, kernel_hw, stride, pad):
    """Standard convolution output arithmetic."""
    return tuple((d + 2 * pad - k) // stride + 1 for d, k in zip(in_hw, kernel_hw))


def _dispatch(x, *arrays):
    """Pick the compiled backend for float32, numpy path otherwise."""
    f32 = all(a.dtype == np.float32 for a in (x, *arrays) if a is not None)
    return kernels if f32 else None


def _norm_bias(w, bias, dtype):
    if bias is None:
        return np.zeros(w.shape[0], dtype=dtype)
    return np.ascontiguousarray(np.asarray(bias, dtype=dtype))


def conv2d(x, w, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Regular 2-D convolution (cross-correlation) with zero padding."""
    x = _as_input(x)
    w = np.ascontiguousarray(np.asarray(w))
    _check_conv_args(x, w, None if bias is None else np.asarray(bias), stride, pad)
    b = _norm_bias(w, bias, x.dtype)
    if _dispatch(x, w, b):
        return kernels.conv2d_forward(x, w, b, stride, pad)
    return kernels.py_conv2d_forward(x, w, b, stride, pad)


def conv2d_backward(x, w, grad_out, stride: int = 1, pad: int = 0):
    """Gradients of conv2d: (grad_input, grad_weights, grad_bias)."""
    x = _as_input(x)
    w = np.ascontiguousarray(np.asarray(w))
    ho, wo = _check_conv_args(x, w, None, stride, pad)
    gy = _as_input(grad_out)
    if gy.shape != (x.shape[0], w.shape[0], ho, wo):
        raise ShapeError(
            f"grad_out shape {gy.shape} does not match forward output "
            f"{(x.shape[0], w.shape[0], ho, wo)}"
        )
    if gy.size >= 256 and np.count_nonzero(gy) * 20 < gy.size:
        return kernels.py_conv2d_backward_sparse(x, w, stride, pad, gy)
    if _dispatch(x, w, gy):
        return kernels.conv2d_backward(x, w, stride, pad, gy)
    return kernels.py_conv2d_backward(x, w, stride, pad, gy)


def _check_offsets(x, off, w, stride, pad):
    ho, wo = _check_conv_args(x, w, None, stride, pad)
    if off.ndim != 4:
        raise ShapeError(f"offsets must be rank-4, got rank {off.ndim}")
    k2 = 2 * w.shape[2] * w.shape[3]
    if off.shape[1] != k2:
        raise ShapeError(f"offsets need {k2} channels (2 per tap), got {off.shape[1]}")
    if off.shape[0] != x.shape[0] or off.shape[2:] != (ho, wo):
        raise ShapeError(
            f"offsets spatial dims {tuple(off.shape)} do not match output grid "
            f"{(x.shape[0], k2, ho, wo)}"
        )
    return ho, wo


def deform_conv2d(x, offsets, w, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Deformable 2-D convolution.

    Each kernel tap samples the input at its regular grid position plus a
    per-output-location fractional offset, evaluated by bilinear
    interpolation with zero exterior. Zero offsets reduce exactly to
    ``conv2d``.
    """
    x = _as_input(x)
    off = _as_input(offsets)
    w = np.ascontiguousarray(np.asarray(w))
    _check_offsets(x, off, w, stride, pad)
    b = _norm_bias(w, bias, x.dtype)
    if _dispatch(x, off, w, b):
        return kernels.deform_conv2d_forward(x, off, w, b, stride, pad)
    return kernels.py_deform_conv2d_forward(x, off, w, b, stride, pad)


def deform_conv2d_backward(x, offsets, w, grad_out, stride: int = 1, pad: int = 0):
    """Gradients of deform_conv2d: (grad_input, grad_offsets, grad_weights, grad_bias).

    The offset gradient uses the derivative of bilinear interpolation,
    which is piecewise linear in the sample position (kinked on the
    integer lattice).
    """
    x = _as_input(x)
    off = _as_input(offsets)
    w = np.ascontiguousarray(np.asarray(w))
    ho, wo = _check_offsets(x, off, w, stride, pad)
    gy = _as_input(grad_out)
    if gy.shape != (x.shape[0], w.shape[0], ho, wo):
        raise ShapeError(
            f"grad_out shape {gy.shape} does not match forward output "
            f"{(x.shape[0], w.shape[0], ho, wo)}"
        )
    if _dispatch(x, off, w, gy):
        return kernels.deform_conv2d_backward(x, off, w, stride, pad, gy)
    return kernels.py_deform_conv2d_backward(x, off, w, stride, pad, gy)


def bilinear_sample(plane, x: float, y: float) -> float:
    """Bilinear interpolation of one channel plane at (x, y).

    Coordinates index pixels directly; anything beyond the border reads as
    zero, so the function is total.
    """
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ShapeError(f"expected a 2-D plane, got rank {plane.ndim}")
    h, w = plane.shape
    x0 = math.floor(x)
    y0 = math.floor(y)
    fx = x - x0
    fy = y - y0

    def read(yy, xx):
        if 0 <= yy < h and 0 <= xx < w:
            return float(plane[yy, xx])
        return 0.0

    top = (1 - fx) * read(y0, x0) + fx * read(y0, x0 + 1)
    bot = (1 - fx) * read(y0 + 1, x0) + fx * read(y0 + 1, x0 + 1)
    return (1 - fy) * top + fy * bot


def relu(x) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x, grad_out) -> np.ndarray:
    """Gradient of relu given the forward *input*."""
    return grad_out * (np.asarray(x) > 0)


def softmax_channels(x) -> np.ndarray:
    """Channel softmax per spatial location of a (B, C, H, W) tensor."""
    x = _as_input(x)
    if x.shape[1] < 1:
        raise ShapeError("softmax needs at least one channel")
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
