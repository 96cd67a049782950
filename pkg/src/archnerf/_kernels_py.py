"""Pure numpy versions of the compiled ray-march kernels.

Same signatures, layouts and semantics as ``archnerf._kernels``; used when
the extension is not built or when ``ARCHNERF_BACKEND=python``.
"""

from __future__ import annotations

import numpy as np

def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def locate(points, lo, hi, shape):
    """Base corner indices, fractional offsets and inside mask for trilinear lookup."""
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    n = np.asarray(shape[:3])
    inside = np.all((points >= lo) & (points <= hi), axis=-1)
    g = (points - lo) * ((n - 1) / (hi - lo))
    base = np.clip(np.floor(g), 0, n - 2).astype(np.int64)
    frac = g - base
    return base, frac, inside


def corner_weights(frac):
    """((a, b, d), weight) for the 8 trilinear corners."""
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
    out = []
    for a in (0, 1):
        wx = fx if a else 1.0 - fx
        for b in (0, 1):
            wy = fy if b else 1.0 - fy
            for d in (0, 1):
                wz = fz if d else 1.0 - fz
                out.append(((a, b, d), wx * wy * wz))
    return out


def interpolate(params, base, frac):
    """Raw parameters (..., 4) at the located points."""
    raw = np.zeros(base.shape[:-1] + (params.shape[-1],))
    for (a, b, d), w in corner_weights(frac):
        raw += w[..., None] * params[base[..., 0] + a, base[..., 1] + b, base[..., 2] + d]
    return raw


def march_forward(params, lo, hi, origins, dirs, t, far, out_color, out_depth, out_acc, out_weights,
                  cache_idx, cache_f):
    _, ny, nz, _ = params.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    base, frac, inside = locate(pts, lo, hi, params.shape)
    raw = interpolate(params, base, frac)
    sigma = np.where(inside, softplus(raw[..., 0]), 0.0)
    color = np.where(inside[..., None], sigmoid(raw[..., 1:]), 0.5)
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = far - t[:, -1]
    alpha = -np.expm1(-sigma * delta)
    keep = 1.0 - alpha
    trans_after = np.cumprod(keep, axis=1)
    trans = np.ones_like(t)
    trans[:, 1:] = trans_after[:, :-1]
    w = trans * alpha
    out_weights[...] = w
    out_acc[...] = w.sum(axis=1)
    out_depth[...] = (w * t).sum(axis=1)
    out_color[...] = (w[..., None] * color).sum(axis=1)
    if cache_f.shape[0] > 0:
        flat = (base[..., 0] * ny + base[..., 1]) * nz * 4 + base[..., 2] * 4
        cache_idx[...] = np.where(inside, flat, -1)
        cache_f[..., 0:3] = np.where(inside[..., None], frac, 0.0)
        cache_f[..., 3] = np.where(inside, sigmoid(raw[..., 0]), 0.0)
        cache_f[..., 4:7] = color
        cache_f[..., 7] = trans_after


def march_backward(grad, t, far, weights, cache_idx, cache_f, g_color, g_depth, g_weights, use_g_weights):
    _, ny, nz, _ = grad.shape
    color = cache_f[..., 4:7]
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = far - t[:, -1]
    g = np.einsum("rc,rnc->rn", g_color, color) + g_depth[:, None] * t
    if use_g_weights:
        g = g + g_weights
    gw = g * weights
    # sum over later samples: inclusive suffix minus self
    later = gw[:, ::-1].cumsum(axis=1)[:, ::-1] - gw
    dsig = delta * (g * cache_f[..., 7] - later)
    inside = cache_idx >= 0
    g_raw = np.zeros(t.shape + (4,))
    g_raw[..., 0] = dsig * cache_f[..., 3]
    g_raw[..., 1:] = g_color[:, None, :] * weights[..., None] * color * (1.0 - color)
    g_raw = g_raw[inside]
    base = cache_idx[inside]
    frac = cache_f[inside][:, 0:3]
    idx, vals = [], []
    for (a, b, d), cw in corner_weights(frac):
        corner = base + (a * ny + b) * nz * 4 + d * 4
        idx.append(corner[:, None] + np.arange(4))
        vals.append(cw[:, None] * g_raw)
    flat = grad.reshape(-1)
    flat += np.bincount(np.concatenate(idx).ravel(), np.concatenate(vals).ravel(), flat.size)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / (1.0 - beta1 ** step)) / (np.sqrt(v / (1.0 - beta2 ** step)) + eps)
