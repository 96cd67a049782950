# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-march kernels for the voxel field.

The field is one (nx, ny, nz, 4) array of raw parameters: channel 0 is raw
density, channels 1..3 raw color. The forward pass renders a batch of rays
and fills a per-sample cache; the backward pass walks that cache and scatters
exact parameter gradients. Rays are processed in index order and samples in
a fixed order, so results are bitwise reproducible.

Cache layout per sample: ``cache_idx`` holds the flat node index of the base
corner (-1 when the sample is outside the box); ``cache_f`` holds
(fx, fy, fz, sigmoid(raw density), c0, c1, c2, transmittance after sample).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log1p, floor, sqrt

cnp.import_array()

cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def march_forward(double[:, :, :, ::1] params, double[::1] lo, double[::1] hi,
                  double[:, ::1] origins, double[:, ::1] dirs,
                  double[:, ::1] t, double[::1] far,
                  double[:, ::1] out_color, double[::1] out_depth, double[::1] out_acc,
                  double[:, ::1] out_weights,
                  cnp.int64_t[:, ::1] cache_idx, double[:, :, ::1] cache_f):
    cdef Py_ssize_t R = t.shape[0], N = t.shape[1]
    cdef Py_ssize_t nx = params.shape[0], ny = params.shape[1], nz = params.shape[2]
    cdef Py_ssize_t sx = ny * nz * 4, sy = nz * 4
    cdef Py_ssize_t r, i, ch, ii, jj, kk, base
    cdef double ix = (nx - 1) / (hi[0] - lo[0])
    cdef double iy = (ny - 1) / (hi[1] - lo[1])
    cdef double iz = (nz - 1) / (hi[2] - lo[2])
    cdef double px, py, pz, gx, gy, gz, fx, fy, fz
    cdef double raw[4]
    cdef double trans, sigma, delta, alpha, wt, acc, depth, cr, cg, cb, c0, c1, c2, ex
    cdef double* p = &params[0, 0, 0, 0]
    cdef double* q
    cdef bint store = cache_f.shape[0] > 0
    with nogil:
        for r in range(R):
            trans = 1.0
            acc = 0.0
            depth = 0.0
            cr = 0.0
            cg = 0.0
            cb = 0.0
            for i in range(N):
                px = origins[r, 0] + t[r, i] * dirs[r, 0]
                py = origins[r, 1] + t[r, i] * dirs[r, 1]
                pz = origins[r, 2] + t[r, i] * dirs[r, 2]
                if i + 1 < N:
                    delta = t[r, i + 1] - t[r, i]
                else:
                    delta = far[r] - t[r, i]
                if (px >= lo[0] and px <= hi[0] and py >= lo[1] and py <= hi[1]
                        and pz >= lo[2] and pz <= hi[2]):
                    gx = (px - lo[0]) * ix
                    gy = (py - lo[1]) * iy
                    gz = (pz - lo[2]) * iz
                    ii = <Py_ssize_t>floor(gx)
                    jj = <Py_ssize_t>floor(gy)
                    kk = <Py_ssize_t>floor(gz)
                    ii = 0 if ii < 0 else (nx - 2 if ii > nx - 2 else ii)
                    jj = 0 if jj < 0 else (ny - 2 if jj > ny - 2 else jj)
                    kk = 0 if kk < 0 else (nz - 2 if kk > nz - 2 else kk)
                    fx = gx - ii
                    fy = gy - jj
                    fz = gz - kk
                    base = ii * sx + jj * sy + kk * 4
                    # corners (a, b) share a z-pair: 8 contiguous doubles
                    for ch in range(4):
                        q = p + base + ch
                        raw[ch] = ((1.0 - fx) * ((1.0 - fy) * ((1.0 - fz) * q[0] + fz * q[4])
                                                 + fy * ((1.0 - fz) * q[sy] + fz * q[sy + 4]))
                                   + fx * ((1.0 - fy) * ((1.0 - fz) * q[sx] + fz * q[sx + 4])
                                           + fy * ((1.0 - fz) * q[sx + sy] + fz * q[sx + sy + 4])))
                    if raw[0] > 0:
                        ex = exp(-raw[0])
                        sigma = raw[0] + log1p(ex)
                        if store:
                            cache_f[r, i, 3] = 1.0 / (1.0 + ex)
                    else:
                        ex = exp(raw[0])
                        sigma = log1p(ex)
                        if store:
                            cache_f[r, i, 3] = ex / (1.0 + ex)
                    c0 = _sigmoid(raw[1])
                    c1 = _sigmoid(raw[2])
                    c2 = _sigmoid(raw[3])
                    if store:
                        cache_idx[r, i] = base
                        cache_f[r, i, 0] = fx
                        cache_f[r, i, 1] = fy
                        cache_f[r, i, 2] = fz
                else:
                    sigma = 0.0
                    c0 = 0.5
                    c1 = 0.5
                    c2 = 0.5
                    if store:
                        cache_idx[r, i] = -1
                        cache_f[r, i, 0] = 0.0
                        cache_f[r, i, 1] = 0.0
                        cache_f[r, i, 2] = 0.0
                        cache_f[r, i, 3] = 0.0
                alpha = -expm1(-sigma * delta)
                wt = trans * alpha
                trans = trans * (1.0 - alpha)
                if store:
                    cache_f[r, i, 4] = c0
                    cache_f[r, i, 5] = c1
                    cache_f[r, i, 6] = c2
                    cache_f[r, i, 7] = trans
                out_weights[r, i] = wt
                acc += wt
                depth += wt * t[r, i]
                cr += wt * c0
                cg += wt * c1
                cb += wt * c2
            out_color[r, 0] = cr
            out_color[r, 1] = cg
            out_color[r, 2] = cb
            out_depth[r] = depth
            out_acc[r] = acc


def march_backward(double[:, :, :, ::1] grad, double[:, ::1] t, double[::1] far,
                   double[:, ::1] weights, cnp.int64_t[:, ::1] cache_idx, double[:, :, ::1] cache_f,
                   double[:, ::1] g_color, double[::1] g_depth, double[:, ::1] g_weights,
                   bint use_g_weights):
    """Accumulate dL/d(raw parameters) into ``grad`` from a forward cache."""
    cdef Py_ssize_t R = t.shape[0], N = t.shape[1]
    cdef Py_ssize_t ny = grad.shape[1], nz = grad.shape[2]
    cdef Py_ssize_t sx = ny * nz * 4, sy = nz * 4
    cdef Py_ssize_t r, i, base
    cdef double g, suffix, dsig, delta, wt, fx, fy, fz, c0, c1, c2, gd, gc0, gc1, gc2, cw
    cdef double wx0, wx1, wy0, wy1, wz0, wz1
    cdef double* p = &grad[0, 0, 0, 0]
    cdef double* q
    cdef int a, b, d
    with nogil:
        for r in range(R):
            suffix = 0.0
            for i in range(N - 1, -1, -1):
                c0 = cache_f[r, i, 4]
                c1 = cache_f[r, i, 5]
                c2 = cache_f[r, i, 6]
                wt = weights[r, i]
                g = g_color[r, 0] * c0 + g_color[r, 1] * c1 + g_color[r, 2] * c2 + g_depth[r] * t[r, i]
                if use_g_weights:
                    g = g + g_weights[r, i]
                if i + 1 < N:
                    delta = t[r, i + 1] - t[r, i]
                else:
                    delta = far[r] - t[r, i]
                dsig = delta * (g * cache_f[r, i, 7] - suffix)
                suffix = suffix + g * wt
                base = cache_idx[r, i]
                if base < 0:
                    continue
                gd = dsig * cache_f[r, i, 3]
                gc0 = g_color[r, 0] * wt * c0 * (1.0 - c0)
                gc1 = g_color[r, 1] * wt * c1 * (1.0 - c1)
                gc2 = g_color[r, 2] * wt * c2 * (1.0 - c2)
                fx = cache_f[r, i, 0]
                fy = cache_f[r, i, 1]
                fz = cache_f[r, i, 2]
                wx0 = 1.0 - fx
                wy0 = 1.0 - fy
                wz0 = 1.0 - fz
                for a in range(2):
                    wx1 = fx if a else wx0
                    for b in range(2):
                        wy1 = fy if b else wy0
                        for d in range(2):
                            wz1 = fz if d else wz0
                            cw = wx1 * wy1 * wz1
                            q = p + base + a * sx + b * sy + d * 4
                            q[0] += cw * gd
                            q[1] += cw * gc0
                            q[2] += cw * gc1
                            q[3] += cw * gc2


def adam_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, Py_ssize_t step):
    """In-place bias-corrected Adam step over flat arrays."""
    cdef Py_ssize_t n = param.shape[0], i
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double g, mi, vi
    with nogil:
        for i in range(n):
            g = grad[i]
            mi = beta1 * m[i] + (1.0 - beta1) * g
            vi = beta2 * v[i] + (1.0 - beta2) * g * g
            m[i] = mi
            v[i] = vi
            param[i] -= lr * (mi / bc1) / (sqrt(vi / bc2) + eps)
