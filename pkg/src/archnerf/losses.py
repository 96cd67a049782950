"""Training objectives and their exact gradients with respect to rendered quantities.

Every loss returns ``(value, gradient)``. Batch terms are sums over rays;
patch terms are means over patches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigInvalid, CountMismatch, DimensionMismatch, EmptyBatch


@dataclass(frozen=True)
class LossWeights:
    color: float = 1.0
    depth: float = 0.0
    reg: float = 0.0

    def __post_init__(self):
        if min(self.color, self.depth, self.reg) < 0:
            raise ConfigInvalid("loss weights must be nonnegative")


@dataclass(frozen=True)
class BoundLConfig:
    gaussian_sigma: float = 0.001  # meters

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ConfigInvalid("gaussian_sigma must be positive")


@dataclass(frozen=True)
class FilterConfig:
    kernel: int = 9
    sigma_space: float = 75.0  # pixels
    sigma_range: float = 10.0  # units of the guide signal
    guide: str = "depth"  # "depth" | "rgb"

    def __post_init__(self):
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ConfigInvalid("kernel must be odd and at least 3")
        if not (self.sigma_space > 0 and self.sigma_range > 0):
            raise ConfigInvalid("filter sigmas must be positive")
        if self.guide not in ("depth", "rgb"):
            raise ConfigInvalid(f"guide must be 'depth' or 'rgb', not {self.guide!r}")


@dataclass
class PatchBatch:
    """Rendered S×S patches.

    ``depth`` is (P, S, S), ``rgb`` (P, S, S, 3) and ``coords`` (P, 3) holds
    (view, row, col) of each top-left corner. ``guide_rgb`` optionally
    replaces ``rgb`` as the joint-bilateral guide.
    """

    depth: np.ndarray
    rgb: Optional[np.ndarray] = None
    coords: Optional[np.ndarray] = None
    guide_rgb: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.depth.shape[-1]


def color_loss(rendered, truth):
    rendered = np.asarray(rendered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if rendered.shape != truth.shape:
        raise CountMismatch(f"rendered {rendered.shape} vs truth {truth.shape}")
    diff = rendered - truth
    return float(np.sum(diff * diff)), 2.0 * diff


def depth_mse_loss(rendered, prior, mask):
    rendered = np.asarray(rendered, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    diff = np.where(mask, rendered - np.asarray(prior, dtype=np.float64), 0.0)
    return float(np.sum(diff * diff)), 2.0 * diff


def boundary_targets(t, prior, sigma: float):
    """Gaussian target weight for every sample, centred on the prior depth."""
    t = np.asarray(t, dtype=np.float64)
    d = np.asarray(prior, dtype=np.float64)[..., None]
    return np.exp(-((t - d) ** 2) / (2.0 * sigma * sigma))


def bound_loss(weights, t, prior, mask, config: BoundLConfig = BoundLConfig()):
    """Squared distance between sample weights and a Gaussian around the prior depth.

    ``weights`` and ``t`` are (R, N); rays without a prior contribute nothing.
    """
    weights = np.asarray(weights, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if weights.shape != np.shape(t):
        raise CountMismatch("weights and sample distances must have equal shapes")
    safe_prior = np.where(mask, prior, 0.0)
    diff = np.where(mask[..., None], weights - boundary_targets(t, safe_prior, config.gaussian_sigma), 0.0)
    return float(np.sum(diff * diff)), 2.0 * diff


def bilateral_filter(patch, guide, config: FilterConfig = FilterConfig()):
    """Edge-preserving smoothing of ``patch`` steered by ``guide``.

    ``patch`` is (..., S, S). ``guide`` is a depth patch of the same shape
    or, with ``config.guide == "rgb"``, an rgb patch (..., S, S, 3). The
    window is clipped at patch borders and renormalized.
    """
    patch = np.asarray(patch, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if config.guide == "rgb":
        if guide.shape != patch.shape + (3,):
            raise DimensionMismatch(f"rgb guide {guide.shape} does not match patch {patch.shape}")
    elif guide.shape != patch.shape:
        raise DimensionMismatch(f"depth guide {guide.shape} does not match patch {patch.shape}")
    if patch.ndim < 2:
        raise DimensionMismatch("patch must be at least two-dimensional")
    h, w = patch.shape[-2:]
    r = config.kernel // 2
    if config.kernel > 2 * min(h, w) - 1:
        raise ConfigInvalid(f"kernel {config.kernel} too large for a {h}x{w} patch")
    g = guide if config.guide == "rgb" else guide[..., None]
    num = np.zeros_like(patch)
    den = np.zeros_like(patch)
    inv_s = 1.0 / (2.0 * config.sigma_space ** 2)
    inv_r = 1.0 / (2.0 * config.sigma_range ** 2)
    for dy in range(-r, r + 1):
        ys, yd = slice(max(0, dy), h + min(0, dy)), slice(max(0, -dy), h - max(0, dy))
        for dx in range(-r, r + 1):
            xs, xd = slice(max(0, dx), w + min(0, dx)), slice(max(0, -dx), w - max(0, dx))
            # output pixel q at [yd, xd] gathers neighbour k at [ys, xs]
            gd = g[..., ys, xs, :] - g[..., yd, xd, :]
            weight = np.exp(-(dy * dy + dx * dx) * inv_s - np.sum(gd * gd, axis=-1) * inv_r)
            # accumulate offsets from the centre value so flat regions come back exactly
            num[..., yd, xd] += weight * (patch[..., ys, xs] - patch[..., yd, xd])
            den[..., yd, xd] += weight
    return patch + num / den


def _filter_guide(batch: PatchBatch, config: FilterConfig):
    if config.guide == "depth":
        return batch.depth
    guide = batch.guide_rgb if batch.guide_rgb is not None else batch.rgb
    if guide is None:
        raise DimensionMismatch("rgb-guided filtering needs patch colors")
    return guide


def patch_reg_loss(batch: PatchBatch, config: FilterConfig = FilterConfig()):
    """Mean over patches of the mean squared gap to the filtered patch.

    The filtered patch is a fixed target: no gradient flows through the filter.
    """
    depth = np.asarray(batch.depth, dtype=np.float64)
    if depth.ndim != 3 or len(depth) == 0:
        raise EmptyBatch("need a nonempty (P, S, S) batch of patches")
    target = bilateral_filter(depth, _filter_guide(batch, config), config)
    diff = depth - target
    per_patch = diff[0].size
    value = float(np.mean(np.mean(diff * diff, axis=(1, 2))))
    return value, 2.0 * diff / (len(depth) * per_patch)


def regnerf_patch_loss(batch: PatchBatch):
    """Mean over patches of summed squared differences between 4-neighbours."""
    depth = np.asarray(batch.depth, dtype=np.float64)
    if depth.ndim != 3 or len(depth) == 0:
        raise EmptyBatch("need a nonempty (P, S, S) batch of patches")
    if min(depth.shape[1:]) < 2:
        raise DimensionMismatch("patch size must be at least 2")
    p = len(depth)
    dh = depth[:, :, 1:] - depth[:, :, :-1]
    dv = depth[:, 1:, :] - depth[:, :-1, :]
    value = float((np.sum(dh * dh) + np.sum(dv * dv)) / p)
    grad = np.zeros_like(depth)
    grad[:, :, 1:] += 2.0 * dh
    grad[:, :, :-1] -= 2.0 * dh
    grad[:, 1:, :] += 2.0 * dv
    grad[:, :-1, :] -= 2.0 * dv
    return value, grad / p


def total_loss(parts: dict, weights: LossWeights) -> float:
    """λ-weighted sum of whichever of ``color``, ``depth``, ``reg`` are present."""
    total = 0.0
    for name in ("color", "depth", "reg"):
        if name in parts:
            total += getattr(weights, name) * parts[name]
    return total
