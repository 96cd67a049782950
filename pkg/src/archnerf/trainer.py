"""Optimization loop for the voxel field.

Each iteration renders a random batch of training rays, evaluates the
active losses, backpropagates into the field and takes one Adam step. Patch
modes switch on their regularizer after a photometric-only warm-up; depth
supervision is active from the first iteration.

Ray and patch sampling draw from separate seeded streams, so adding or
removing a term never perturbs the other's samples.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field as dc_field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .camera import pixel_rays
from .errors import ConfigInvalid, ImageTooSmall, MissingPriors
from .field import AdamState, FieldGradient, VoxelField, adam_step, init_field, room_box, save_checkpoint
from .losses import (BoundLConfig, FilterConfig, LossWeights, PatchBatch, bound_loss, color_loss,
                     depth_mse_loss, patch_reg_loss, regnerf_patch_loss, total_loss)
from .render import DEFAULT_NEAR, render_rays, render_rays_backward, stratified_batch

# mode -> (depth term, patch term)
MODES = {
    "rgb_only": (None, None),
    "depth_mse": ("mse", None),
    "depth_boundl": ("boundl", None),
    "patch_bilateral": (None, "bilateral"),
    "patch_joint_bilateral": (None, "joint"),
    "patch_regnerf": (None, "regnerf"),
    "boundl_plus_joint": ("boundl", "joint"),
}

DEFAULT_COLOR_WEIGHT = 10.0
DEFAULT_DEPTH_WEIGHT = 10.0
DEFAULT_REG_WEIGHT = 1000.0
# Gaussian width for training: about two sample bins for 128 samples over a ~10 m ray.
# A 1 mm Gaussian almost never overlaps a sample, so its targets are all near zero.
DEFAULT_BOUNDL_SIGMA = 0.15
CHECKPOINT_NAME = "field.ckpt"


def default_weights(mode: str) -> LossWeights:
    depth, patch = MODES[mode]
    return LossWeights(DEFAULT_COLOR_WEIGHT,
                       DEFAULT_DEPTH_WEIGHT if depth else 0.0,
                       DEFAULT_REG_WEIGHT if patch else 0.0)


@dataclass
class TrainConfig:
    mode: str = "rgb_only"
    iterations: int = 2000
    rays_per_batch: int = 4096
    patches_per_batch: int = 4
    patch_size: int = 16
    weights: Optional[LossWeights] = None
    boundl: BoundLConfig = dc_field(default_factory=lambda: BoundLConfig(DEFAULT_BOUNDL_SIGMA))
    filter: FilterConfig = dc_field(default_factory=FilterConfig)
    lr: float = 5e-2
    lr_final: float = 5e-3
    seed: int = 0
    resolution: tuple = (64, 64, 64)
    samples: int = 128
    near: float = DEFAULT_NEAR
    phase_switch: Optional[int] = None
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigInvalid(f"unknown mode {self.mode!r}; choose from {sorted(MODES)}")
        if self.iterations <= 0 or self.rays_per_batch <= 0:
            raise ConfigInvalid("iterations and rays_per_batch must be positive")
        if MODES[self.mode][1] and self.patches_per_batch <= 0:
            raise ConfigInvalid(f"mode {self.mode} needs patches_per_batch > 0")
        if self.samples < 2 or self.patch_size < 2:
            raise ConfigInvalid("need at least 2 samples per ray and patch size >= 2")
        if self.weights is None:
            self.weights = default_weights(self.mode)
        if isinstance(self.boundl, dict):
            self.boundl = BoundLConfig(**self.boundl)
        if isinstance(self.filter, dict):
            self.filter = FilterConfig(**self.filter)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.resolution = tuple(int(r) for r in self.resolution)
        if self.phase_switch is None:
            self.phase_switch = int(round(0.6 * self.iterations))
        if self.patch_term in ("bilateral", "joint"):
            guide = "rgb" if self.patch_term == "joint" else "depth"
            self.filter = replace(self.filter, guide=guide)

    @property
    def depth_term(self):
        return MODES[self.mode][0]

    @property
    def patch_term(self):
        return MODES[self.mode][1]

    def learning_rate(self, iteration: int) -> float:
        """Cosine decay from ``lr`` to ``lr_final`` over the run."""
        frac = iteration / max(1, self.iterations - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))

    def reg_weight(self, iteration: int) -> float:
        if self.patch_term is None or iteration < self.phase_switch:
            return 0.0
        return self.weights.reg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "resolution" in d:
            d["resolution"] = tuple(d["resolution"])
        return cls(**d)


class TrainData:
    """Flattened training pixels with their rays, colors and priors."""

    def __init__(self, views: Sequence, room_bounds, require_priors: bool = False):
        train = [v for v in views if v.split == "train"]
        if not train:
            raise ConfigInvalid("dataset has no training views")
        self.views = train
        h, w = train[0].intrinsics.height, train[0].intrinsics.width
        self.height, self.width = h, w
        self.origins = np.stack([v.pose.translation for v in train])
        dirs, rgb, prior = [], [], []
        for v in train:
            _, d = pixel_rays(v.intrinsics, v.pose)
            dirs.append(d.reshape(-1, 3))
            rgb.append(np.asarray(v.rgb, dtype=np.float64).reshape(-1, 3))
            if v.prior is None:
                if require_priors:
                    raise MissingPriors("depth supervision needs prior maps for every training view")
                prior.append(np.zeros(h * w))
            else:
                prior.append(np.asarray(v.prior, dtype=np.float64).reshape(-1))
        self.dirs = np.concatenate(dirs)
        self.rgb = np.concatenate(rgb)
        self.prior = np.concatenate(prior)
        self.mask = self.prior > 0
        lo, hi = (np.asarray(b, dtype=np.float64) for b in room_bounds)
        self.room_lo, self.room_hi = lo, hi
        self.far = float(np.linalg.norm(hi - lo))

    @property
    def pixels_per_view(self) -> int:
        return self.height * self.width

    def __len__(self):
        return len(self.dirs)

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


@dataclass
class RayBatch:
    index: np.ndarray
    origins: np.ndarray
    dirs: np.ndarray
    rgb: np.ndarray
    prior: np.ndarray
    mask: np.ndarray


def _gather(data: TrainData, index: np.ndarray) -> RayBatch:
    view = index // data.pixels_per_view
    return RayBatch(index, data.origins[view], data.dirs[index], data.rgb[index],
                    data.prior[index], data.mask[index])


def sample_ray_batch(data: TrainData, count: int, rng: np.random.Generator) -> RayBatch:
    """``count`` pixels drawn uniformly from all training pixels."""
    return _gather(data, rng.integers(0, len(data), size=count))


def sample_patch_batch(height: int, width: int, n_views: int, count: int, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    """(count, 3) array of (view, row, col) top-left corners of size×size patches."""
    if size > height or size > width:
        raise ImageTooSmall(f"{height}x{width} image cannot hold a {size}x{size} patch")
    view = rng.integers(0, n_views, size=count)
    row = rng.integers(0, height - size + 1, size=count)
    col = rng.integers(0, width - size + 1, size=count)
    return np.stack([view, row, col], axis=1)


def patch_pixel_index(data: TrainData, corners: np.ndarray, size: int) -> np.ndarray:
    """Flat training-pixel indices (P, S, S) of the patches."""
    dy, dx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    rows = corners[:, 1, None, None] + dy
    cols = corners[:, 2, None, None] + dx
    return corners[:, 0, None, None] * data.pixels_per_view + rows * data.width + cols


@dataclass
class TrainLog:
    records: list = dc_field(default_factory=list)

    def append(self, record: dict):
        if self.records and record["iteration"] <= self.records[-1]["iteration"]:
            raise ValueError("log iterations must increase")
        self.records.append(record)

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "TrainLog":
        log = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                log.records.append(json.loads(line))
        return log


@dataclass
class TrainResult:
    field: VoxelField
    log: TrainLog
    checkpoints: list
    state: AdamState


def train(views: Sequence, room_bounds, config: TrainConfig, out_dir=None,
          callback: Optional[Callable[[int, VoxelField], None]] = None,
          callback_every: int = 0) -> TrainResult:
    """Optimize a fresh field on the training split of ``views``.

    ``room_bounds`` is the room shell ((xmin, ymin, zmin), (xmax, ymax, zmax));
    the field box adds a 5% margin and rays are sampled out to the room
    diagonal. ``callback(i, field)`` runs after iterations i where
    ``i % callback_every == 0`` (i counted from 1).
    """
    data = TrainData(views, room_bounds,
                     require_priors=bool(config.depth_term) and config.weights.depth > 0)
    lo, hi = room_box((data.room_lo, data.room_hi))
    field = init_field(config.resolution, config.seed, (lo, hi))
    state = AdamState.for_params([field.params])
    ray_rng = np.random.default_rng([config.seed, 1])
    patch_rng = np.random.default_rng([config.seed, 2])
    grad = FieldGradient.zeros_like(field)
    log = TrainLog()
    checkpoints = []
    out = Path(out_dir) if out_dir is not None else None
    w = config.weights
    start = time.perf_counter()

    for it in range(config.iterations):
        grad.data.fill(0.0)
        parts = {}
        batch = sample_ray_batch(data, config.rays_per_batch, ray_rng)
        t = stratified_batch(len(batch.index), config.near, data.far, config.samples, ray_rng)
        fwd = render_rays(field, batch.origins, batch.dirs, t, data.far, keep_cache=True)
        parts["color"], g_rgb = color_loss(fwd.color, batch.rgb)
        g_rgb *= w.color
        g_depth = g_weights = None
        if config.depth_term == "mse" and w.depth > 0:
            parts["depth"], g_depth = depth_mse_loss(fwd.depth, batch.prior, batch.mask)
            g_depth *= w.depth
        elif config.depth_term == "boundl" and w.depth > 0:
            parts["depth"], g_weights = bound_loss(fwd.weights, t, batch.prior, batch.mask, config.boundl)
            g_weights *= w.depth
        render_rays_backward(field, fwd, g_rgb, g_depth, g_weights, grad=grad)

        lam_reg = config.reg_weight(it)
        if lam_reg > 0:
            parts["reg"] = _patch_step(field, data, config, patch_rng, lam_reg, grad)

        lr = config.learning_rate(it)
        adam_step([field.params], [grad.data], state, lr)
        done = it + 1
        if done % config.log_every == 0 or done == config.iterations or it == 0:
            lam = {"color": w.color, "depth": w.depth, "reg": lam_reg}
            log.append({
                "iteration": done,
                **{f"loss_{k}": v for k, v in parts.items()},
                "total": total_loss(parts, LossWeights(w.color, w.depth, lam_reg)),
                "lambda_reg": lam_reg,
                "lambdas": {k: lam[k] for k in parts},
                "lr": lr,
                "rays": len(batch.index),
                "wall_time": time.perf_counter() - start,
            })
        if out is not None and config.checkpoint_every and done % config.checkpoint_every == 0 \
                and done != config.iterations:
            path = out / f"field_{done:06d}.ckpt"
            save_checkpoint(path, field, state, {"iteration": done, "config": config.to_dict()})
            checkpoints.append(path)
        if callback is not None and callback_every and done % callback_every == 0:
            callback(done, field)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = out / CHECKPOINT_NAME
        save_checkpoint(path, field, state, {"iteration": config.iterations, "config": config.to_dict()})
        checkpoints.append(path)
        log.write_jsonl(out / "train_log.jsonl")
    return TrainResult(field, log, checkpoints, state)


def _patch_step(field: VoxelField, data: TrainData, config: TrainConfig,
                rng: np.random.Generator, lam_reg: float, grad: FieldGradient) -> float:
    s = config.patch_size
    corners = sample_patch_batch(data.height, data.width, len(data.views),
                                 config.patches_per_batch, s, rng)
    index = patch_pixel_index(data, corners, s).reshape(-1)
    rays = _gather(data, index)
    t = stratified_batch(len(index), config.near, data.far, config.samples, rng)
    fwd = render_rays(field, rays.origins, rays.dirs, t, data.far, keep_cache=True)
    shape = (len(corners), s, s)
    batch = PatchBatch(fwd.depth.reshape(shape), fwd.color.reshape(shape + (3,)), corners,
                       guide_rgb=rays.rgb.reshape(shape + (3,)))
    if config.patch_term == "regnerf":
        value, g = regnerf_patch_loss(batch)
    else:
        value, g = patch_reg_loss(batch, config.filter)
    render_rays_backward(field, fwd, None, lam_reg * g.reshape(-1), None, grad=grad)
    return value
