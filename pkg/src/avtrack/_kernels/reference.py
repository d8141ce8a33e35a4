"""Numpy reference implementations of the kernel API.

This is the pure-Python fallback backend. Every function here has a
matching compiled twin in `_core.pyx`; the two must agree to ~1e-12
(asserted by tests/test_kernels.py). All arrays are float64.
"""

import numpy as np

NAME = "reference"

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def softmax_rows_fwd(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0]


def layer_norm_bwd(gy, xhat, inv_std, gamma):
    gxhat = gy * gamma
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = inv_std[:, None] * (gxhat - m1 - xhat * m2)
    ggamma = (gy * xhat).sum(axis=0)
    gbeta = gy.sum(axis=0)
    return gx, ggamma, gbeta


def gelu_fwd(x):
    u = _GELU_C * (x + _GELU_A * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, gy):
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _im2col3(x):
    """[h,w,ci] -> [h*w, 9*ci] patches of the zero-padded 3x3 neighbourhood."""
    h, w, ci = x.shape
    px = np.zeros((h + 2, w + 2, ci))
    px[1:-1, 1:-1] = x
    cols = np.empty((h * w, 9 * ci))
    for di in range(3):
        for dj in range(3):
            k = di * 3 + dj
            cols[:, k * ci:(k + 1) * ci] = px[di:di + h, dj:dj + w].reshape(h * w, ci)
    return cols


def conv3x3_fwd(x, w, b):
    h, wd, ci = x.shape
    co = w.shape[3]
    cols = _im2col3(x)
    y = cols @ w.reshape(9 * ci, co) + b
    return y.reshape(h, wd, co)


def conv3x3_bwd(x, w, gy):
    h, wd, ci = x.shape
    co = w.shape[3]
    g = gy.reshape(h * wd, co)
    cols = _im2col3(x)
    gw = (cols.T @ g).reshape(3, 3, ci, co)
    gb = g.sum(axis=0)
    gcols = g @ w.reshape(9 * ci, co).T
    gpx = np.zeros((h + 2, wd + 2, ci))
    for di in range(3):
        for dj in range(3):
            k = di * 3 + dj
            gpx[di:di + h, dj:dj + wd] += gcols[:, k * ci:(k + 1) * ci].reshape(h, wd, ci)
    return gpx[1:-1, 1:-1].copy(), gw, gb


def im2patches_fwd(x, p):
    hh, ww, c = x.shape
    h, w = hh // p, ww // p
    return (
        x.reshape(h, p, w, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h * w, p * p * c)
        .copy()
    )


def im2patches_bwd(g, shape, p):
    hh, ww, c = shape
    h, w = hh // p, ww // p
    return (
        g.reshape(h, w, p, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(hh, ww, c)
        .copy()
    )


def bilinear_crop(frame, x0, y0, scale, out_side):
    """Resample a square window (top-left x0,y0, side out_side*scale) to
    out_side pixels, replicating edge pixels outside the frame."""
    fh, fw, c = frame.shape
    u = np.arange(out_side)
    sx = x0 + (u + 0.5) * scale - 0.5
    sy = y0 + (u + 0.5) * scale - 0.5
    x_lo = np.clip(np.floor(sx).astype(np.int64), 0, fw - 1)
    y_lo = np.clip(np.floor(sy).astype(np.int64), 0, fh - 1)
    x_hi = np.minimum(x_lo + 1, fw - 1)
    y_hi = np.minimum(y_lo + 1, fh - 1)
    fx = np.clip(sx - x_lo, 0.0, 1.0)
    fy = np.clip(sy - y_lo, 0.0, 1.0)
    top = frame[y_lo][:, x_lo] * (1 - fx)[None, :, None] + frame[y_lo][:, x_hi] * fx[None, :, None]
    bot = frame[y_hi][:, x_lo] * (1 - fx)[None, :, None] + frame[y_hi][:, x_hi] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
