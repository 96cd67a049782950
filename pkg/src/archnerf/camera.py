"""Pinhole intrinsics, pixel rays and the unstitched 360-degree capture rig.

Camera frame: x right, y down, z forward. Poses are camera-to-world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import InvalidFov, OutOfBounds, StationOutsideRoom
from .geometry import Pose, Ray


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "fx": self.fx,
                "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]))


def intrinsics_from_fov(width: int, height: int, fov_h: float, fov_v: float) -> CameraIntrinsics:
    """Intrinsics for a centred pinhole with the given field of view in degrees."""
    for fov in (fov_h, fov_v):
        if not (0.0 < fov < 180.0):
            raise InvalidFov(f"field of view must be in (0, 180) degrees, got {fov}")
    fx = (width / 2.0) / math.tan(math.radians(fov_h) / 2.0)
    fy = (height / 2.0) / math.tan(math.radians(fov_v) / 2.0)
    return CameraIntrinsics(width, height, fx, fy, width / 2.0, height / 2.0)


def image_point_rays(intrinsics: CameraIntrinsics, pose: Pose, u, v) -> Tuple[np.ndarray, np.ndarray]:
    """World rays through continuous image coordinates (pixel centres sit at idx + 0.5)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cam = np.stack([(u - intrinsics.cx) / intrinsics.fx,
                    (v - intrinsics.cy) / intrinsics.fy,
                    np.ones_like(u)], axis=-1)
    dirs = cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def pixel_rays(intrinsics: CameraIntrinsics, pose: Pose) -> Tuple[np.ndarray, np.ndarray]:
    """Rays through every pixel centre, shaped (H, W, 3)."""
    v, u = np.meshgrid(np.arange(intrinsics.height) + 0.5,
                       np.arange(intrinsics.width) + 0.5, indexing="ij")
    return image_point_rays(intrinsics, pose, u, v)


def pixel_to_ray(intrinsics: CameraIntrinsics, pose: Pose, px: int, py: int) -> Ray:
    if not (0 <= px < intrinsics.width and 0 <= py < intrinsics.height):
        raise OutOfBounds(f"pixel ({px}, {py}) outside {intrinsics.width}x{intrinsics.height}")
    o, d = image_point_rays(intrinsics, pose, px + 0.5, py + 0.5)
    return Ray(o, d)


def project(intrinsics: CameraIntrinsics, pose: Pose, points) -> np.ndarray:
    """World points to continuous image coordinates (u, v)."""
    cam = pose.to_camera(points)
    z = cam[..., 2]
    u = intrinsics.fx * cam[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * cam[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def look_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Camera-to-world rotation looking along yaw (about +z) and pitch (elevation).

    Roll is fixed so the image x axis stays horizontal.
    """
    yaw, pitch = math.radians(yaw_deg), math.radians(pitch_deg)
    forward = np.array([math.cos(pitch) * math.cos(yaw),
                        math.cos(pitch) * math.sin(yaw),
                        math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    # re-orthonormalise to kill trig round-off
    u, _, vt = np.linalg.svd(rot)
    return u @ vt


@dataclass(frozen=True)
class RigConfig:
    stations: Tuple[int, int] = (2, 2)
    spacing: float = 1.5
    camera_height: float = 1.5
    position_noise_std: float = 0.1
    seed: int = 0
    sweep_count: int = 15
    sweep_step: float = 24.0
    ceiling_view_count: int = 5
    ceiling_margin: float = 5.0
    fov_h: float = 27.0
    fov_v: float = 40.0
    width: int = 160
    height: int = 288

    def __post_init__(self):
        if abs(self.sweep_count * self.sweep_step - 360.0) > 1e-9:
            raise ValueError("sweep_count * sweep_step must equal 360 degrees")
        if not (0 <= self.ceiling_view_count <= 5):
            raise ValueError("ceiling_view_count must be in 0..5")
        if self.stations[0] < 1 or self.stations[1] < 1:
            raise ValueError("need at least one station per grid axis")

    @property
    def overlap(self) -> float:
        return self.fov_h - self.sweep_step

    def intrinsics(self) -> CameraIntrinsics:
        return intrinsics_from_fov(self.width, self.height, self.fov_h, self.fov_v)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["stations"] = list(self.stations)
        return d


@dataclass(frozen=True)
class RigPose:
    station: int
    pose: Pose
    kind: str = field(default="sweep")  # "sweep" | "ceiling"


def station_grid(rig: RigConfig) -> np.ndarray:
    nx, ny = rig.stations
    xs = (np.arange(nx) - (nx - 1) / 2.0) * rig.spacing
    ys = (np.arange(ny) - (ny - 1) / 2.0) * rig.spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def generate_rig_poses(rig: RigConfig, room_bounds) -> list[RigPose]:
    """Poses of the whole rig: per station a 15-view level sweep then the ceiling views.

    ``room_bounds`` is ((xmin, ymin, zmin), (xmax, ymax, zmax)).
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in room_bounds)
    rng = np.random.default_rng(rig.seed)
    grid = station_grid(rig)
    noise = rng.normal(0.0, rig.position_noise_std, size=grid.shape) if rig.position_noise_std > 0 \
        else np.zeros_like(grid)
    margin = 0.5
    tilt_from_vertical = 90.0 - rig.fov_v / 2.0 - rig.ceiling_margin
    ceiling_specs = [(0.0, 90.0)] + [(yaw, 90.0 - tilt_from_vertical) for yaw in (0.0, 90.0, 180.0, 270.0)]

    poses: list[RigPose] = []
    for sid, (xy, dxy) in enumerate(zip(grid, noise)):
        pos = np.array([xy[0] + dxy[0], xy[1] + dxy[1], lo[2] + rig.camera_height])
        inside = (np.all(pos[:2] >= lo[:2] + margin) and np.all(pos[:2] <= hi[:2] - margin)
                  and lo[2] + margin <= pos[2] <= hi[2] - margin)
        if not inside:
            raise StationOutsideRoom(f"station {sid} at {pos.tolist()} violates the 0.5 m room margin")
        for k in range(rig.sweep_count):
            poses.append(RigPose(sid, Pose(look_rotation(k * rig.sweep_step, 0.0), pos), "sweep"))
        for yaw, pitch in ceiling_specs[: rig.ceiling_view_count]:
            poses.append(RigPose(sid, Pose(look_rotation(yaw, pitch), pos), "ceiling"))
    return poses
