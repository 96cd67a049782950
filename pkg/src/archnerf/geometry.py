"""Rays, planes and rigid poses, plus the intersection and plane-fitting
routines used by the scene oracle, the capture rig and the depth priors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import Collinear, Degenerate

PARALLEL_EPS = 1e-9
_ZERO_COMPONENT = 1e-12


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a.copy()


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _vec3(self.origin)
        d = _vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got norm {np.linalg.norm(d)}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, direction) -> "Ray":
        d = _vec3(direction)
        return cls(origin, d / np.linalg.norm(d))

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True, eq=False)
class Plane:
    """The set {x : normal . x = offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = _vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got norm {np.linalg.norm(n)}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset

    def allclose(self, other: "Plane", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.normal, other.normal, atol=atol)
                    and abs(self.offset - other.offset) <= atol)

    def __repr__(self):
        n = ", ".join(f"{x:.6g}" for x in self.normal)
        return f"Plane(normal=({n}), offset={self.offset:.6g})"


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        t = _vec3(self.translation)
        if not is_rotation(r, 1e-7):
            raise ValueError("pose rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def to_camera(self, points) -> np.ndarray:
        """World points to camera-frame coordinates."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation


def is_rotation(r: np.ndarray, tol: float) -> bool:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.all(np.abs(r.T @ r - np.eye(3)) <= tol) and abs(np.linalg.det(r) - 1.0) <= tol)


def orient_normal(n: np.ndarray) -> np.ndarray:
    """Deterministic sign: z >= 0 when nonzero, then positive x, then positive y."""
    for k in (2, 0, 1):
        if abs(n[k]) > _ZERO_COMPONENT:
            return n if n[k] > 0 else -n
    return n


def ray_plane_intersect(ray: Ray, plane: Plane) -> Optional[float]:
    """Distance t > 0 at which the ray meets the plane, or None."""
    denom = float(plane.normal @ ray.direction)
    if abs(denom) < PARALLEL_EPS:
        return None
    t = (plane.offset - float(plane.normal @ ray.origin)) / denom
    if t <= 0.0:
        return None
    return t


def intersect_rays_plane(origins: np.ndarray, directions: np.ndarray, plane: Plane) -> np.ndarray:
    """Vectorised :func:`ray_plane_intersect`; NaN where there is no hit."""
    denom = directions @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane.offset - origins @ plane.normal) / denom
    bad = (np.abs(denom) < PARALLEL_EPS) | ~(t > 0.0)
    return np.where(bad, np.nan, t)


def plane_from_three_points(p1, p2, p3) -> Plane:
    p1, p2, p3 = _vec3(p1), _vec3(p2), _vec3(p3)
    cross = np.cross(p2 - p1, p3 - p1)
    scale = max(np.linalg.norm(p2 - p1), np.linalg.norm(p3 - p1), np.linalg.norm(p3 - p2))
    norm = np.linalg.norm(cross)
    if scale == 0.0 or norm < 1e-9 * scale:
        raise Collinear("points are collinear or coincident")
    n = orient_normal(cross / norm)
    centroid = (p1 + p2 + p3) / 3.0
    return Plane(n, float(n @ centroid))


def fit_plane_least_squares(points: Sequence) -> tuple[Plane, float]:
    """Total-least-squares plane through ``points``.

    Returns the plane and the RMS point-to-plane distance.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise Degenerate("need at least three points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    spreads = s / np.sqrt(len(pts))
    if spreads[1] < 1e-9:
        raise Degenerate("points are collinear or coincident")
    n = orient_normal(vt[2] / np.linalg.norm(vt[2]))
    plane = Plane(n, float(n @ centroid))
    residual = float(np.sqrt(np.mean(plane.signed_distance(pts) ** 2)))
    return plane, residual


def parallel_plane_at_distance(plane: Plane, signed_distance: float) -> Plane:
    return Plane(plane.normal, plane.offset + signed_distance)
