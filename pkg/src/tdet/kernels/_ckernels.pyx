# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: the hot-loop backend.

float32 only; semantics match ``_pykernels`` (zero padding, zero exterior
for fractional sampling, (dx, dy) offset channel pairs per kernel tap).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

NAME = "c"

ctypedef cnp.float32_t f32


cdef inline f32 _read(const f32[:, :, :, ::1] x, Py_ssize_t b, Py_ssize_t c,
                      Py_ssize_t yy, Py_ssize_t xx, Py_ssize_t h, Py_ssize_t w) nogil:
    if yy < 0 or yy >= h or xx < 0 or xx >= w:
        return 0.0
    return x[b, c, yy, xx]


def conv2d_forward(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] w,
                   const f32[::1] bias, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    # explicit zero padding removes per-read bounds checks from the loops
    xp_arr = np.pad(np.asarray(x), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cdef const f32[:, :, :, ::1] xp = xp_arr
    out = np.zeros((b, co, ho, wo), dtype=np.float32)
    cdef f32[:, :, :, ::1] y = out
    cdef Py_ssize_t ib, io, oy, ox, ic, iy, ix, base_y, base_x
    cdef f32 acc

    cdef f32 wv
    # shift-accumulate order: the inner loop walks output and input rows
    # contiguously. Per-pixel accumulation order stays (ic, iy, ix)
    # ascending, bit-identical to the deformable kernel at zero offsets.
    with nogil:
        for ib in range(b):
            for io in range(co):
                for ic in range(ci):
                    for iy in range(kh):
                        for ix in range(kw):
                            wv = w[io, ic, iy, ix]
                            for oy in range(ho):
                                base_y = oy * stride + iy
                                for ox in range(wo):
                                    y[ib, io, oy, ox] += wv * xp[ib, ic, base_y, ox * stride + ix]
                for oy in range(ho):
                    for ox in range(wo):
                        y[ib, io, oy, ox] += bias[io]
    return out


def conv2d_backward(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] w,
                    int stride, int pad, const f32[:, :, :, ::1] gy):
    cdef Py_ssize_t b = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    xp_arr = np.pad(np.asarray(x), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cdef const f32[:, :, :, ::1] xp = xp_arr
    gxp_arr = np.zeros_like(xp_arr)
    cdef f32[:, :, :, ::1] gxp = gxp_arr
    gw_arr = np.zeros((co, ci, kh, kw), dtype=np.float32)
    gb_arr = np.zeros(co, dtype=np.float32)
    cdef f32[:, :, :, ::1] gw = gw_arr
    cdef f32[::1] gb = gb_arr
    cdef Py_ssize_t ib, io, oy, ox, ic, iy, ix, base_y, base_x
    cdef f32 g

    cdef f32 wv, acc
    with nogil:
        for ib in range(b):
            for io in range(co):
                for oy in range(ho):
                    for ox in range(wo):
                        gb[io] += gy[ib, io, oy, ox]
                for ic in range(ci):
                    for iy in range(kh):
                        for ix in range(kw):
                            wv = w[io, ic, iy, ix]
                            acc = 0.0
                            for oy in range(ho):
                                base_y = oy * stride + iy
                                for ox in range(wo):
                                    g = gy[ib, io, oy, ox]
                                    acc = acc + g * xp[ib, ic, base_y, ox * stride + ix]
                                    gxp[ib, ic, base_y, ox * stride + ix] += g * wv
                            gw[io, ic, iy, ix] += acc
    if pad:
        gx_arr = np.ascontiguousarray(gxp_arr[:, :, pad : pad + h, pad : pad + wd])
    else:
        gx_arr = gxp_arr
    return gx_arr, gw_arr, gb_arr


def deform_conv2d_forward(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] off,
                          const f32[:, :, :, ::1] w, const f32[::1] bias,
                          int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = off.shape[2], wo = off.shape[3]
    cdef Py_ssize_t k = kh * kw, m = ci * k
    out = np.zeros((b, co, ho, wo), dtype=np.float32)
    cdef f32[:, :, :, ::1] y = out
    wmat_arr = np.ascontiguousarray(np.asarray(w).reshape(co, m))
    cdef f32[:, ::1] wmat = wmat_arr
    # bilinear samples for one output position, shared by all out channels;
    # layout matches the flattened weight: index ic * k + tap
    sbuf_arr = np.empty(m, dtype=np.float32)
    cdef f32[::1] sbuf = sbuf_arr
    cdef Py_ssize_t ib, io, oy, ox, ic, iy, ix, t, x0, y0, j
    cdef f32 acc, px, py, fx, fy, v00, v01, v10, v11

    with nogil:
        for ib in range(b):
            for oy in range(ho):
                for ox in range(wo):
                    for iy in range(kh):
                        for ix in range(kw):
                            t = iy * kw + ix
                            px = ox * stride - pad + ix + off[ib, 2 * t, oy, ox]
                            py = oy * stride - pad + iy + off[ib, 2 * t + 1, oy, ox]
                            x0 = <Py_ssize_t>floor(px)
                            y0 = <Py_ssize_t>floor(py)
                            fx = px - x0
                            fy = py - y0
                            for ic in range(ci):
                                v00 = _read(x, ib, ic, y0, x0, h, wd)
                                v01 = _read(x, ib, ic, y0, x0 + 1, h, wd)
                                v10 = _read(x, ib, ic, y0 + 1, x0, h, wd)
                                v11 = _read(x, ib, ic, y0 + 1, x0 + 1, h, wd)
                                sbuf[ic * k + t] = (1 - fy) * ((1 - fx) * v00 + fx * v01) \
                                    + fy * ((1 - fx) * v10 + fx * v11)
                    for io in range(co):
                        acc = 0.0
                        for j in range(m):
                            acc = acc + wmat[io, j] * sbuf[j]
                        y[ib, io, oy, ox] = acc + bias[io]
    return out


def deform_conv2d_backward(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] off,
                           const f32[:, :, :, ::1] w, int stride, int pad,
                           const f32[:, :, :, ::1] gy):
    cdef Py_ssize_t b = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    gx_arr = np.zeros((b, ci, h, wd), dtype=np.float32)
    goff_arr = np.zeros((b, off.shape[1], ho, wo), dtype=np.float32)
    gw_arr = np.zeros((co, ci, kh, kw), dtype=np.float32)
    gb_arr = np.zeros(co, dtype=np.float32)
    cdef f32[:, :, :, ::1] gx = gx_arr
    cdef f32[:, :, :, ::1] goff = goff_arr
    cdef f32[:, :, :, ::1] gwv = gw_arr
    cdef f32[::1] gb = gb_arr
    cdef Py_ssize_t ib, io, oy, ox, ic, iy, ix, t, x0, y0
    cdef f32 g, gs, px, py, fx, fy, v00, v01, v10, v11, s

    cdef bint any_grad
    with nogil:
        for ib in range(b):
            for oy in range(ho):
                for ox in range(wo):
                    any_grad = False
                    for io in range(co):
                        gb[io] += gy[ib, io, oy, ox]
                        if gy[ib, io, oy, ox] != 0.0:
                            any_grad = True
                    if not any_grad:
                        continue
                    for iy in range(kh):
                        for ix in range(kw):
                            t = iy * kw + ix
                            px = ox * stride - pad + ix + off[ib, 2 * t, oy, ox]
                            py = oy * stride - pad + iy + off[ib, 2 * t + 1, oy, ox]
                            x0 = <Py_ssize_t>floor(px)
                            y0 = <Py_ssize_t>floor(py)
                            fx = px - x0
                            fy = py - y0
                            for ic in range(ci):
                                v00 = _read(x, ib, ic, y0, x0, h, wd)
                                v01 = _read(x, ib, ic, y0, x0 + 1, h, wd)
                                v10 = _read(x, ib, ic, y0 + 1, x0, h, wd)
                                v11 = _read(x, ib, ic, y0 + 1, x0 + 1, h, wd)
                                s = (1 - fy) * ((1 - fx) * v00 + fx * v01) \
                                    + fy * ((1 - fx) * v10 + fx * v11)
                                # Upstream gradient reaching this sample.
                                gs = 0.0
                                for io in range(co):
                                    g = gy[ib, io, oy, ox]
                                    gs += g * w[io, ic, iy, ix]
                                    gwv[io, ic, iy, ix] += g * s
                                goff[ib, 2 * t, oy, ox] += gs * (
                                    (1 - fy) * (v01 - v00) + fy * (v11 - v10))
                                goff[ib, 2 * t + 1, oy, ox] += gs * (
                                    (1 - fx) * (v10 - v00) + fx * (v11 - v01))
                                if 0 <= y0 < h and 0 <= x0 < wd:
                                    gx[ib, ic, y0, x0] += gs * (1 - fx) * (1 - fy)
                                if 0 <= y0 < h and 0 <= x0 + 1 < wd:
                                    gx[ib, ic, y0, x0 + 1] += gs * fx * (1 - fy)
                                if 0 <= y0 + 1 < h and 0 <= x0 < wd:
                                    gx[ib, ic, y0 + 1, x0] += gs * (1 - fx) * fy
                                if 0 <= y0 + 1 < h and 0 <= x0 + 1 < wd:
                                    gx[ib, ic, y0 + 1, x0 + 1] += gs * fx * fy
    return gx_arr, goff_arr, gw_arr, gb_arr
