# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``ctxnet._fallback`` exactly."""

import numpy as np

from libc.math cimport floor

ctypedef fused real:
    float
    double


cdef inline double _pix(const real[:, :, ::1] img, Py_ssize_t n, Py_ssize_t y,
                        Py_ssize_t x, Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    if y < 0 or y >= h or x < 0 or x >= w:
        return 0.0
    return img[n, y, x]


def warp_bilinear(const real[:, :, ::1] images, const double[:, :, ::1] inv, real[:, :, ::1] out):
    """Inverse-map every output pixel through ``inv[n]`` (2x3) and sample bilinearly."""
    cdef Py_ssize_t n_img = images.shape[0], h = images.shape[1], w = images.shape[2]
    cdef Py_ssize_t n, y, x, x0, y0
    cdef double sx, sy, fx, fy, a, b, c, d, top, bot, v, hi
    with nogil:
        for n in range(n_img):
            for y in range(h):
                for x in range(w):
                    sx = inv[n, 0, 0] * x + inv[n, 0, 1] * y + inv[n, 0, 2]
                    sy = inv[n, 1, 0] * x + inv[n, 1, 1] * y + inv[n, 1, 2]
                    x0 = <Py_ssize_t>floor(sx)
                    y0 = <Py_ssize_t>floor(sy)
                    if x0 < -1 or x0 >= w or y0 < -1 or y0 >= h:
                        out[n, y, x] = 0
                        continue
                    fx = sx - x0
                    fy = sy - y0
                    a = _pix(images, n, y0, x0, h, w)
                    b = _pix(images, n, y0, x0 + 1, h, w)
                    c = _pix(images, n, y0 + 1, x0, h, w)
                    d = _pix(images, n, y0 + 1, x0 + 1, h, w)
                    top = a + fx * (b - a)
                    bot = c + fx * (d - c)
                    v = top + fy * (bot - top)
                    hi = a
                    if b > hi:
                        hi = b
                    if c > hi:
                        hi = c
                    if d > hi:
                        hi = d
                    if v > hi:
                        v = hi
                    out[n, y, x] = <real>v


def shared_dense_max(const real[:, :, ::1] grid, const real[:, ::1] wt, const real[::1] bias,
                     real[:, ::1] out, long long[:, ::1] arg):
    """max over contexts of relu(grid[n, c] @ wt + bias); first index wins ties."""
    cdef Py_ssize_t n_img = grid.shape[0], n_ctx = grid.shape[1], k_in = grid.shape[2]
    cdef Py_ssize_t n_out = wt.shape[1]
    cdef Py_ssize_t n, c, k, j
    cdef real g, v
    cdef real[::1] acc = np.empty(n_out, dtype=np.asarray(bias).dtype)
    with nogil:
        for n in range(n_img):
            for c in range(n_ctx):
                for j in range(n_out):
                    acc[j] = bias[j]
                for k in range(k_in):
                    g = grid[n, c, k]
                    for j in range(n_out):
                        acc[j] = acc[j] + g * wt[k, j]
                for j in range(n_out):
                    v = acc[j] if acc[j] > 0 else 0
                    if c == 0 or v > out[n, j]:
                        out[n, j] = v
                        arg[n, j] = c


def maxpool2x2(const real[:, :, :, ::1] x, real[:, :, :, ::1] out, signed char[:, :, :, ::1] pos):
    """2x2/stride-2 max; ``pos`` is the in-window offset 0..3, first found on ties."""
    cdef Py_ssize_t nb = x.shape[0], ch = x.shape[1], ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef real best, v
    cdef signed char p
    with nogil:
        for n in range(nb):
            for c in range(ch):
                for i in range(ho):
                    for j in range(wo):
                        best = x[n, c, 2 * i, 2 * j]
                        p = 0
                        v = x[n, c, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            p = 1
                        v = x[n, c, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            p = 2
                        v = x[n, c, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            p = 3
                        out[n, c, i, j] = best
                        pos[n, c, i, j] = p


def maxpool2x2_backward(const real[:, :, :, ::1] grad_out, const signed char[:, :, :, ::1] pos,
                        real[:, :, :, ::1] grad_in):
    cdef Py_ssize_t nb = grad_out.shape[0], ch = grad_out.shape[1]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef signed char p
    with nogil:
        for n in range(nb):
            for c in range(ch):
                for i in range(ho):
                    for j in range(wo):
                        p = pos[n, c, i, j]
                        grad_in[n, c, 2 * i + (p >> 1), 2 * j + (p & 1)] = grad_out[n, c, i, j]
