# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: bilinear gather for warping, Gaussian splatting for fusion.

Semantics mirror ``burstlab._pykernels`` exactly; the two are selected at import
time by ``burstlab.kernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, ceil, isfinite

cnp.import_array()


def bilinear_sample(const double[:, ::1] img, const double[::1] xs, const double[::1] ys):
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t m = xs.shape[0]
    out_arr = np.zeros(m, dtype=np.float64)
    valid_arr = np.zeros(m, dtype=np.bool_)
    cdef double[::1] out = out_arr
    cdef cnp.npy_bool[::1] valid = valid_arr
    cdef Py_ssize_t k, x0, y0, x1, y1
    cdef double x, y, fx, fy, top, bot
    for k in range(m):
        x = xs[k]
        y = ys[k]
        if not (isfinite(x) and isfinite(y)):
            continue
        if x < 0.0 or y < 0.0 or x > w - 1 or y > h - 1:
            continue
        x0 = <Py_ssize_t>floor(x)
        y0 = <Py_ssize_t>floor(y)
        if x0 > w - 2:
            x0 = w - 2 if w >= 2 else 0
        if y0 > h - 2:
            y0 = h - 2 if h >= 2 else 0
        x1 = x0 + 1 if x0 + 1 < w else x0
        y1 = y0 + 1 if y0 + 1 < h else y0
        fx = x - x0
        fy = y - y0
        top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
        bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
        out[k] = (1.0 - fy) * top + fy * bot
        valid[k] = True
    return out_arr, valid_arr


def splat(const double[::1] px, const double[::1] py, const double[::1] values,
          const cnp.int64_t[::1] channels, double sigma, double radius,
          double[:, :, ::1] num, double[:, :, ::1] den):
    cdef Py_ssize_t h = num.shape[1]
    cdef Py_ssize_t w = num.shape[2]
    cdef Py_ssize_t m = px.shape[0]
    cdef Py_ssize_t k, jx, jy, lox, hix, loy, hiy, c
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double dx, dy, wgt, v
    for k in range(m):
        c = channels[k]
        v = values[k]
        lox = <Py_ssize_t>ceil(px[k] - 0.5 - radius)
        hix = <Py_ssize_t>floor(px[k] - 0.5 + radius)
        loy = <Py_ssize_t>ceil(py[k] - 0.5 - radius)
        hiy = <Py_ssize_t>floor(py[k] - 0.5 + radius)
        if lox < 0:
            lox = 0
        if loy < 0:
            loy = 0
        if hix > w - 1:
            hix = w - 1
        if hiy > h - 1:
            hiy = h - 1
        for jy in range(loy, hiy + 1):
            dy = jy + 0.5 - py[k]
            for jx in range(lox, hix + 1):
                dx = jx + 0.5 - px[k]
                wgt = exp(-(dx * dx + dy * dy) * inv2s2)
                num[c, jy, jx] += wgt * v
                den[c, jy, jx] += wgt
