"""Differentiable volume rendering along rays.

Per-ray reference routines (``sample_stratified``, ``compute_weights``,
``render``, ``render_backward``) operate on one ray's samples; the batched
``render_rays`` / ``render_rays_backward`` run the same math through the ray
march kernels for training and evaluation.

Colors composite over a black background and depth is the unnormalized
weighted sum of sample distances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidBounds
from .field import FieldGradient, VoxelField, query
from .geometry import Ray
from .kernels import get_backend

DEFAULT_SAMPLES = 128
DEFAULT_NEAR = 0.05


@dataclass
class RaySamples:
    t: np.ndarray  # (N,)
    delta: np.ndarray  # (N,)
    sigma: np.ndarray  # (N,)
    color: np.ndarray  # (N, 3)
    weights: Optional[np.ndarray] = None

    @classmethod
    def from_distances(cls, t, far: float, sigma, color) -> "RaySamples":
        t = np.asarray(t, dtype=np.float64)
        return cls(t, sample_deltas(t, far), np.asarray(sigma, dtype=np.float64),
                   np.asarray(color, dtype=np.float64).reshape(-1, 3))


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: float
    accumulation: float
    weights: np.ndarray
    samples: Optional[RaySamples] = None


def sample_deltas(t, far):
    """Spacing to the next sample; the last one reaches ``far``."""
    t = np.asarray(t, dtype=np.float64)
    delta = np.empty_like(t)
    delta[..., :-1] = np.diff(t, axis=-1)
    delta[..., -1] = np.asarray(far) - t[..., -1]
    return delta


def _check_bounds(near, far, n):
    if not (0.0 <= near < far):
        raise InvalidBounds(f"need 0 <= near < far, got near={near}, far={far}")
    if n < 2:
        raise InvalidBounds(f"need at least 2 samples, got {n}")


def sample_stratified(near: float, far: float, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One distance per equal-width bin: bin centers without ``rng``, uniform jitter with it."""
    _check_bounds(near, far, n)
    width = (far - near) / n
    offset = 0.5 if rng is None else rng.uniform(0.0, 1.0, size=n)
    return near + (np.arange(n) + offset) * width


def stratified_batch(count: int, near, far, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Stratified distances for ``count`` rays, shaped (count, n)."""
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (count,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (count,))
    if count and (np.any(near < 0) or np.any(far <= near)):
        raise InvalidBounds("need 0 <= near < far for every ray")
    if n < 2:
        raise InvalidBounds(f"need at least 2 samples, got {n}")
    offset = 0.5 if rng is None else rng.uniform(0.0, 1.0, size=(count, n))
    width = (far - near) / n
    return near[:, None] + (np.arange(n)[None, :] + offset) * width[:, None]


def transmittance(samples: RaySamples) -> np.ndarray:
    """T_1..T_{N+1}; the last entry is the light that passes every sample."""
    keep = 1.0 + np.expm1(-samples.sigma * samples.delta)
    return np.concatenate([[1.0], np.cumprod(keep)])


def compute_weights(samples: RaySamples) -> np.ndarray:
    alpha = -np.expm1(-samples.sigma * samples.delta)
    n = len(alpha)
    w = np.empty(n)
    trans = 1.0
    for i in range(n):
        w[i] = trans * alpha[i]
        trans = trans * (1.0 - alpha[i])
    samples.weights = w
    return w


def render(samples: RaySamples) -> RenderOutput:
    w = samples.weights if samples.weights is not None else compute_weights(samples)
    color = w @ samples.color
    return RenderOutput(color, float(w @ samples.t), float(w.sum()), w, samples)


def render_backward(samples: RaySamples, g_color=None, g_depth: float = 0.0, g_weights=None):
    """Exact dL/dσ_i and dL/dc_i given upstream gradients on color, depth and weights."""
    w = samples.weights if samples.weights is not None else compute_weights(samples)
    g_color = np.zeros(3) if g_color is None else np.asarray(g_color, dtype=np.float64)
    g = samples.color @ g_color + g_depth * samples.t
    if g_weights is not None:
        g = g + np.asarray(g_weights, dtype=np.float64)
    trans_next = transmittance(samples)[1:]
    gw = g * w
    later = np.concatenate([np.cumsum(gw[::-1])[::-1][1:], [0.0]])
    d_sigma = samples.delta * (g * trans_next - later)
    d_color = w[:, None] * g_color[None, :]
    return d_sigma, d_color


def render_pixel(field: VoxelField, ray: Ray, near: float, far: float, n: int = DEFAULT_SAMPLES,
                 rng: Optional[np.random.Generator] = None) -> RenderOutput:
    """Sample, query and composite a single ray (bin centers unless ``rng`` is given)."""
    t = sample_stratified(near, far, n, rng)
    sigma, color = query(field, ray.origin[None, :] + t[:, None] * ray.direction[None, :])
    samples = RaySamples(t, sample_deltas(t, far), sigma, color)
    compute_weights(samples)
    return render(samples)


@dataclass
class BatchRender:
    color: np.ndarray  # (R, 3)
    depth: np.ndarray  # (R,)
    accumulation: np.ndarray  # (R,)
    weights: np.ndarray  # (R, N)
    t: np.ndarray  # (R, N)
    far: np.ndarray  # (R,)
    cache_idx: Optional[np.ndarray] = None
    cache_f: Optional[np.ndarray] = None


_CACHE_WIDTH = 8


def _prep(origins, dirs, t, far):
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    t = np.ascontiguousarray(t, dtype=np.float64)
    far = np.array(np.broadcast_to(np.asarray(far, dtype=np.float64), (len(t),)))
    if len(origins) != len(t) or len(dirs) != len(t):
        raise ValueError("origins, directions and sample rows must have equal counts")
    return origins, dirs, t, far


def render_rays(field: VoxelField, origins, dirs, t, far, backend=None,
                keep_cache: bool = False) -> BatchRender:
    """Render a batch of rays with sample distances ``t`` (R, N).

    With ``keep_cache`` the per-sample state needed by
    :func:`render_rays_backward` is kept on the result.
    """
    origins, dirs, t, far = _prep(origins, dirs, t, far)
    r, n = t.shape
    if keep_cache:
        cache_idx = np.empty((r, n), dtype=np.int64)
        cache_f = np.empty((r, n, _CACHE_WIDTH))
    else:
        cache_idx = np.empty((0, 0), dtype=np.int64)
        cache_f = np.empty((0, 0, _CACHE_WIDTH))
    out = BatchRender(np.zeros((r, 3)), np.zeros(r), np.zeros(r), np.zeros((r, n)), t, far)
    get_backend(backend).march_forward(field.params, field.lo, field.hi, origins, dirs, t, far,
                                       out.color, out.depth, out.accumulation, out.weights,
                                       cache_idx, cache_f)
    if keep_cache:
        out.cache_idx, out.cache_f = cache_idx, cache_f
    return out


def render_rays_backward(field: VoxelField, forward: BatchRender, g_color=None, g_depth=None,
                         g_weights=None, grad: Optional[FieldGradient] = None,
                         backend=None) -> FieldGradient:
    """Accumulate raw-parameter gradients for a batch rendered with ``keep_cache``.

    Rays are reduced in index order, so the result is reproducible bit for bit.
    """
    if forward.cache_f is None:
        raise ValueError("forward pass was run without keep_cache=True")
    r = len(forward.t)
    g_color = np.zeros((r, 3)) if g_color is None else np.ascontiguousarray(g_color, dtype=np.float64)
    g_depth = np.zeros(r) if g_depth is None else np.ascontiguousarray(g_depth, dtype=np.float64)
    use_w = g_weights is not None
    g_weights = np.ascontiguousarray(g_weights, dtype=np.float64) if use_w else np.zeros((r, 1))
    if grad is None:
        grad = FieldGradient.zeros_like(field)
    get_backend(backend).march_backward(grad.data, forward.t, forward.far, forward.weights,
                                        forward.cache_idx, forward.cache_f,
                                        g_color, g_depth, g_weights, use_w)
    return grad


def render_image(field: VoxelField, intrinsics, pose, near: float, far: float, n: int = DEFAULT_SAMPLES,
                 chunk: int = 8192, backend=None):
    """Render a whole view at bin-center samples; returns (rgb H×W×3, depth H×W, acc H×W)."""
    from .camera import pixel_rays

    origins, dirs = pixel_rays(intrinsics, pose)
    h, w = intrinsics.height, intrinsics.width
    origins = origins.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)
    t_row = sample_stratified(near, far, n)
    rgb = np.zeros((h * w, 3))
    depth = np.zeros(h * w)
    acc = np.zeros(h * w)
    for s in range(0, h * w, chunk):
        e = min(s + chunk, h * w)
        t = np.broadcast_to(t_row, (e - s, n))
        out = render_rays(field, origins[s:e], dirs[s:e], t, far, backend)
        rgb[s:e], depth[s:e], acc[s:e] = out.color, out.depth, out.accumulation
    return rgb.reshape(h, w, 3), depth.reshape(h, w), acc.reshape(h, w)
