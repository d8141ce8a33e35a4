# Compiled kernel core. Mirrors reference.py exactly; single pass per
# kernel, no temporaries. Keep the two files in sync.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, floor

cnp.import_array()

NAME = "compiled"

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def softmax_rows_fwd(double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c))
    cdef double[:, ::1] y = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            y[i, j] = exp(x[i, j] - m)
            s += y[i, j]
        for j in range(c):
            y[i, j] /= s
    return out


def softmax_rows_bwd(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1]
    out = np.empty((r, c))
    cdef double[:, ::1] gx = out
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += gy[i, j] * y[i, j]
        for j in range(c):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_fwd(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c))
    xhat_arr = np.empty((r, c))
    inv_arr = np.empty(r)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv_std = inv_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, d, istd
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += x[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[i, j] - mu
            var += d * d
        var /= c
        istd = 1.0 / sqrt(var + eps)
        inv_std[i] = istd
        for j in range(c):
            xhat[i, j] = (x[i, j] - mu) * istd
            y[i, j] = xhat[i, j] * gamma[j] + beta[j]
    return out, xhat_arr, inv_arr


def layer_norm_bwd(double[:, ::1] gy, double[:, ::1] xhat, double[::1] inv_std,
                   double[::1] gamma):
    cdef Py_ssize_t r = gy.shape[0], c = gy.shape[1]
    gx_arr = np.empty((r, c))
    gg_arr = np.zeros(c)
    gb_arr = np.zeros(c)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gg = gg_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, gxh
    for i in range(r):
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            gxh = gy[i, j] * gamma[j]
            m1 += gxh
            m2 += gxh * xhat[i, j]
        m1 /= c
        m2 /= c
        for j in range(c):
            gxh = gy[i, j] * gamma[j]
            gx[i, j] = inv_std[i] * (gxh - m1 - xhat[i, j] * m2)
            gg[j] += gy[i, j] * xhat[i, j]
            gb[j] += gy[i, j]
    return gx_arr, gg_arr, gb_arr


def gelu_fwd(x_in):
    x_arr = np.ascontiguousarray(x_in).ravel()
    out = np.empty_like(x_arr)
    cdef double[::1] x = x_arr
    cdef double[::1] y = out
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double u, v
    for i in range(n):
        v = x[i]
        u = GELU_C * (v + GELU_A * v * v * v)
        y[i] = 0.5 * v * (1.0 + tanh(u))
    return out.reshape(np.asarray(x_in).shape)


def gelu_bwd(x_in, gy_in):
    x_arr = np.ascontiguousarray(x_in).ravel()
    gy_arr = np.ascontiguousarray(gy_in).ravel()
    out = np.empty_like(x_arr)
    cdef double[::1] x = x_arr
    cdef double[::1] gy = gy_arr
    cdef double[::1] gx = out
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double u, t, du, v
    for i in range(n):
        v = x[i]
        u = GELU_C * (v + GELU_A * v * v * v)
        t = tanh(u)
        du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        gx[i] = gy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return out.reshape(np.asarray(x_in).shape)


def conv3x3_fwd(double[:, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t h = x.shape[0], wd = x.shape[1], ci = x.shape[2], co = w.shape[3]
    out = np.empty((h, wd, co))
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t i, j, di, dj, k, o, si, sj
    cdef double acc
    for i in range(h):
        for j in range(wd):
            for o in range(co):
                y[i, j, o] = b[o]
            for di in range(3):
                si = i + di - 1
                if si < 0 or si >= h:
                    continue
                for dj in range(3):
                    sj = j + dj - 1
                    if sj < 0 or sj >= wd:
                        continue
                    for k in range(ci):
                        acc = x[si, sj, k]
                        for o in range(co):
                            y[i, j, o] += acc * w[di, dj, k, o]
    return out


def conv3x3_bwd(double[:, :, ::1] x, double[:, :, :, ::1] w, double[:, :, ::1] gy):
    cdef Py_ssize_t h = x.shape[0], wd = x.shape[1], ci = x.shape[2], co = w.shape[3]
    gx_arr = np.zeros((h, wd, ci))
    gw_arr = np.zeros((3, 3, ci, co))
    gb_arr = np.zeros(co)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, j, di, dj, k, o, si, sj
    cdef double g, xv
    for i in range(h):
        for j in range(wd):
            for o in range(co):
                gb[o] += gy[i, j, o]
            for di in range(3):
                si = i + di - 1
                if si < 0 or si >= h:
                    continue
                for dj in range(3):
                    sj = j + dj - 1
                    if sj < 0 or sj >= wd:
                        continue
                    for k in range(ci):
                        xv = x[si, sj, k]
                        g = 0.0
                        for o in range(co):
                            gw[di, dj, k, o] += xv * gy[i, j, o]
                            g += w[di, dj, k, o] * gy[i, j, o]
                        gx[si, sj, k] += g
    return gx_arr, gw_arr, gb_arr


def im2patches_fwd(double[:, :, ::1] x, Py_ssize_t p):
    cdef Py_ssize_t hh = x.shape[0], ww = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t h = hh // p, w = ww // p
    out = np.empty((h * w, p * p * c))
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t gi, gj, pi, pj, k
    for gi in range(h):
        for gj in range(w):
            for pi in range(p):
                for pj in range(p):
                    for k in range(c):
                        cols[gi * w + gj, (pi * p + pj) * c + k] = x[gi * p + pi, gj * p + pj, k]
    return out


def im2patches_bwd(double[:, ::1] g, shape, Py_ssize_t p):
    cdef Py_ssize_t hh = shape[0], ww = shape[1], c = shape[2]
    cdef Py_ssize_t h = hh // p, w = ww // p
    out = np.empty((hh, ww, c))
    cdef double[:, :, ::1] gx = out
    cdef Py_ssize_t gi, gj, pi, pj, k
    for gi in range(h):
        for gj in range(w):
            for pi in range(p):
                for pj in range(p):
                    for k in range(c):
                        gx[gi * p + pi, gj * p + pj, k] = g[gi * w + gj, (pi * p + pj) * c + k]
    return out


def bilinear_crop(double[:, :, ::1] frame, double x0, double y0, double scale,
                  Py_ssize_t out_side):
    cdef Py_ssize_t fh = frame.shape[0], fw = frame.shape[1], c = frame.shape[2]
    out = np.empty((out_side, out_side, c))
    cdef double[:, :, ::1] crop = out
    cdef Py_ssize_t u, v, k, xl, yl, xh, yh
    cdef double sx, sy, fx, fy, top, bot
    for v in range(out_side):
        sy = y0 + (v + 0.5) * scale - 0.5
        yl = <Py_ssize_t>floor(sy)
        if yl < 0:
            yl = 0
        if yl > fh - 1:
            yl = fh - 1
        yh = yl + 1
        if yh > fh - 1:
            yh = fh - 1
        fy = sy - yl
        if fy < 0.0:
            fy = 0.0
        if fy > 1.0:
            fy = 1.0
        for u in range(out_side):
            sx = x0 + (u + 0.5) * scale - 0.5
            xl = <Py_ssize_t>floor(sx)
            if xl < 0:
                xl = 0
            if xl > fw - 1:
                xl = fw - 1
            xh = xl + 1
            if xh > fw - 1:
                xh = fw - 1
            fx = sx - xl
            if fx < 0.0:
                fx = 0.0
            if fx > 1.0:
                fx = 1.0
            for k in range(c):
                top = frame[yl, xl, k] * (1 - fx) + frame[yl, xh, k] * fx
                bot = frame[yh, xl, k] * (1 - fx) + frame[yh, xh, k] * fx
                crop[v, u, k] = top * (1 - fy) + bot * fy
    return out
