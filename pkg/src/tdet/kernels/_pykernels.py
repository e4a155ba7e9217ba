"""Pure-numpy convolution kernels: the fallback backend.

Semantics are identical to the compiled backend in ``_ckernels``: zero
padding, zero exterior for fractional sampling, NCHW layout, offset
channels ordered (dx, dy) per kernel tap. Regular and deformable forward
share one matmul so that zero offsets reproduce conv2d bit-for-bit.

Unlike the compiled backend these routines are dtype-preserving, which is
what lets the finite-difference checker run the same code in float64.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _patches(x, kh, kw, stride, pad):
    """im2col: zero-padded sliding windows as (B, C*kh*kw, Ho*Wo)."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, ho * wo)
    return cols, ho, wo


def conv2d_forward(x, w, bias, stride, pad):
    b = x.shape[0]
    co, ci, kh, kw = w.shape
    cols, ho, wo = _patches(x, kh, kw, stride, pad)
    y = np.matmul(w.reshape(co, ci * kh * kw), cols).reshape(b, co, ho, wo)
    if bias is not None:
        y = y + bias.reshape(1, co, 1, 1)
    return y


def conv2d_backward(x, w, stride, pad, gy):
    b, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    _, _, ho, wo = gy.shape
    cols, _, _ = _patches(x, kh, kw, stride, pad)
    g = gy.reshape(b, co, ho * wo)

    gw = np.einsum("bop,bmp->om", g, cols).reshape(co, ci, kh, kw)
    gb = gy.sum(axis=(0, 2, 3))

    gcols = np.matmul(w.reshape(co, ci * kh * kw).T, g)
    gcols = gcols.reshape(b, ci, kh, kw, ho, wo)
    gxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    for iy in range(kh):
        for ix in range(kw):
            gxp[:, :, iy : iy + stride * ho : stride, ix : ix + stride * wo : stride] += gcols[
                :, :, iy, ix
            ]
    gx = gxp[:, :, pad : pad + h, pad : pad + wd]
    return np.ascontiguousarray(gx), gw, gb


def conv2d_backward_sparse(x, w, stride, pad, gy):
    """conv2d_backward specialized for mostly-zero upstream gradients.

    Gathers patches only at nonzero gy positions; used for the RPN heads,
    whose sampled-anchor gradients touch a few dozen cells per step.
    """
    b, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ib, io, oy, ox = np.nonzero(gy)
    g = gy[ib, io, oy, ox]

    gw = np.zeros_like(w)
    gb = np.zeros(co, dtype=x.dtype)
    gxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    if g.size:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        patches = win[ib, :, oy * stride, ox * stride]  # (N, C, kh, kw)
        np.add.at(gw, io, g[:, None, None, None] * patches)
        np.add.at(gb, io, g)
        contrib = g[:, None, None, None] * w[io]
        for n in range(g.size):
            ys = oy[n] * stride
            xs = ox[n] * stride
            gxp[ib[n], :, ys : ys + kh, xs : xs + kw] += contrib[n]
    gx = gxp[:, :, pad : pad + h, pad : pad + wd]
    return np.ascontiguousarray(gx), gw, gb


def _sample_positions(off, kh, kw, stride, pad):
    """Fractional sampling positions (B, K, Ho, Wo) for each kernel tap."""
    _, _, ho, wo = off.shape
    k = kh * kw
    taps = np.arange(k)
    ky = (taps // kw).astype(off.dtype)
    kx = (taps % kw).astype(off.dtype)
    oy, ox = np.meshgrid(np.arange(ho, dtype=off.dtype), np.arange(wo, dtype=off.dtype), indexing="ij")
    px = ox[None, None] * stride - pad + kx[None, :, None, None] + off[:, 0::2]
    py = oy[None, None] * stride - pad + ky[None, :, None, None] + off[:, 1::2]
    return px, py


def _corners(x, px, py):
    """Gather the four bilinear corners with zero exterior.

    Returns (v00, v01, v10, v11) each shaped (B, C, K, Ho, Wo) plus the
    fractional parts fx, fy shaped (B, K, Ho, Wo).
    """
    b, c, h, w = x.shape
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # (B, H, W, C)
    bb = np.arange(b).reshape(b, 1, 1, 1)

    def gather(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        v = xt[bb, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]  # (B, K, Ho, Wo, C)
        v = v * valid[..., None].astype(x.dtype)
        return np.moveaxis(v, -1, 1)  # (B, C, K, Ho, Wo)

    return (
        gather(y0, x0),
        gather(y0, x0 + 1),
        gather(y0 + 1, x0),
        gather(y0 + 1, x0 + 1),
        fx,
        fy,
    )


def deform_conv2d_forward(x, off, w, bias, stride, pad):
    b, c, _, _ = x.shape
    co, ci, kh, kw = w.shape
    _, _, ho, wo = off.shape
    px, py = _sample_positions(off, kh, kw, stride, pad)
    v00, v01, v10, v11, fx, fy = _corners(x, px, py)
    fx = fx[:, None]
    fy = fy[:, None]
    s = (
        (1 - fy) * ((1 - fx) * v00 + fx * v01)
        + fy * ((1 - fx) * v10 + fx * v11)
    )  # (B, C, K, Ho, Wo)
    cols = s.reshape(b, c * kh * kw, ho * wo)
    y = np.matmul(w.reshape(co, ci * kh * kw), cols).reshape(b, co, ho, wo)
    if bias is not None:
        y = y + bias.reshape(1, co, 1, 1)
    return y


def deform_conv2d_backward(x, off, w, stride, pad, gy):
    b, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    _, _, ho, wo = gy.shape
    k = kh * kw

    px, py = _sample_positions(off, kh, kw, stride, pad)
    v00, v01, v10, v11, fx, fy = _corners(x, px, py)
    fxc = fx[:, None]
    fyc = fy[:, None]
    s = (1 - fyc) * ((1 - fxc) * v00 + fxc * v01) + fyc * ((1 - fxc) * v10 + fxc * v11)

    g = gy.reshape(b, co, ho * wo)
    wmat = w.reshape(co, ci * k)

    gw = np.einsum("bop,bmp->om", g, s.reshape(b, ci * k, ho * wo)).reshape(co, ci, kh, kw)
    gb = gy.sum(axis=(0, 2, 3))

    # Upstream gradient on each sampled value.
    gs = np.matmul(wmat.T, g).reshape(b, ci, k, ho, wo)

    # Offset gradients: derivative of bilinear interpolation in px / py.
    ds_dx = (1 - fyc) * (v01 - v00) + fyc * (v11 - v10)
    ds_dy = (1 - fxc) * (v10 - v00) + fxc * (v11 - v01)
    goff = np.empty_like(off)
    goff[:, 0::2] = (gs * ds_dx).sum(axis=1)
    goff[:, 1::2] = (gs * ds_dy).sum(axis=1)

    # Input gradient: scatter the four corner contributions.
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    gxt = np.zeros((b, h, wd, c), dtype=x.dtype)  # (B, H, W, C) scatter target
    bb = np.arange(b).reshape(b, 1, 1, 1)

    def scatter(yi, xi, weight):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < wd)
        contrib = np.moveaxis(gs * weight, 1, -1) * valid[..., None]  # (B, K, Ho, Wo, C)
        np.add.at(gxt, (bb, np.clip(yi, 0, h - 1), np.clip(xi, 0, wd - 1)), contrib)

    scatter(y0, x0, (1 - fxc) * (1 - fyc))
    scatter(y0, x0 + 1, fxc * (1 - fyc))
    scatter(y0 + 1, x0, (1 - fxc) * fyc)
    scatter(y0 + 1, x0 + 1, fxc * fyc)
    gx = np.ascontiguousarray(gxt.transpose(0, 3, 1, 2))

    return gx, goff, gw, gb
