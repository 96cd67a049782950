"""Image and depth quality metrics plus held-out-view evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import EmptyMask, ShapeMismatch, TooSmall

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_blur(img, g):
    # separable blur; the crop keeps only windows that lie fully inside the image
    r = len(g) // 2
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a, b) -> float:
    """Mean SSIM over valid 11×11 Gaussian windows, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window()
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _valid_blur(x, g), _valid_blur(y, g)
        sxx = _valid_blur(x * x, g) - mx * mx
        syy = _valid_blur(y * y, g) - my * my
        sxy = _valid_blur(x * y, g) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def depth_rmse(rendered, truth, mask) -> float:
    rendered = np.asarray(rendered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if rendered.shape != truth.shape or mask.shape != truth.shape:
        raise ShapeMismatch("depth maps and mask must share a shape")
    if not mask.any():
        raise EmptyMask("no pixels selected for depth RMSE")
    diff = rendered[mask] - truth[mask]
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class ViewMetrics:
    view: int
    psnr: float
    ssim: float
    depth_rmse: Optional[float]


@dataclass
class EvalReport:
    views: list = dc_field(default_factory=list)
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0
    mean_depth_rmse: Optional[float] = None
    config: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([ViewMetrics(**v) for v in d["views"]], d["mean_psnr"], d["mean_ssim"],
                   d["mean_depth_rmse"], d.get("config", {}))

    @classmethod
    def from_views(cls, views: Sequence[ViewMetrics], config: Optional[dict] = None) -> "EvalReport":
        rm = [v.depth_rmse for v in views if v.depth_rmse is not None]
        return cls(list(views), float(np.mean([v.psnr for v in views])),
                   float(np.mean([v.ssim for v in views])),
                   float(np.mean(rm)) if rm else None, config or {})


def depth_mask(view) -> np.ndarray:
    """Pixels scored for depth: prior-covered when priors exist, else the architectural classes."""
    if view.prior is not None:
        return np.asarray(view.prior) > 0
    return np.isin(view.seg, (1, 2, 3))


def evaluate_views(field, views: Sequence, far: float, near: float = 0.05, samples: int = 128,
                   indices: Optional[Sequence[int]] = None, config: Optional[dict] = None,
                   renders: Optional[list] = None) -> EvalReport:
    """Render each view at bin-center samples and score it against its ground truth.

    Pass a list as ``renders`` to collect the (rgb, depth) images.
    """
    from .render import render_image

    indices = list(range(len(views))) if indices is None else list(indices)
    rows = []
    for i, v in zip(indices, views):
        rgb, depth, _ = render_image(field, v.intrinsics, v.pose, near, far, samples)
        m = depth_mask(v)
        rm = depth_rmse(depth, v.depth, m) if m.any() else None
        rows.append(ViewMetrics(int(i), psnr(rgb, v.rgb), ssim(rgb, v.rgb), rm))
        if renders is not None:
            renders.append((rgb, depth))
    return EvalReport.from_views(rows, config)
