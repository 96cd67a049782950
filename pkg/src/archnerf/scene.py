"""Procedural indoor scenes and an analytic ray tracer producing ground-truth
RGB, Euclidean depth and architectural segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .camera import CameraIntrinsics, RigConfig, generate_rig_poses, pixel_rays
from .errors import OriginOutsideRoom, UnknownPreset
from .geometry import Pose, Ray

OTHER, FLOOR, CEILING, WALL = 0, 1, 2, 3
CLASS_NAMES = {OTHER: "other", FLOOR: "floor", CEILING: "ceiling", WALL: "wall"}
ARCHITECTURAL = (FLOOR, CEILING, WALL)

LIGHT_DIR = np.array([0.3, 0.45, 0.84]) / np.linalg.norm([0.3, 0.45, 0.84])
AMBIENT = 0.3

Color = Tuple[float, float, float]


@dataclass(frozen=True)
class Pattern:
    kind: str = "solid"            # solid | checker | gradient
    color_a: Color = (0.5, 0.5, 0.5)
    color_b: Color = (0.5, 0.5, 0.5)
    cell: float = 0.2              # checker cell edge, meters

    def to_dict(self) -> dict:
        return {"kind": self.kind, "color_a": list(self.color_a),
                "color_b": list(self.color_b), "cell": self.cell}

    @classmethod
    def from_dict(cls, d: dict) -> "Pattern":
        return cls(d["kind"], tuple(d["color_a"]), tuple(d["color_b"]), float(d["cell"]))


@dataclass(frozen=True)
class Box:
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    faces: Tuple[Pattern, ...]     # -x, +x, -y, +y, -z, +z

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        c, s = np.asarray(self.center), np.asarray(self.size)
        return c - s / 2, c + s / 2

    def to_dict(self) -> dict:
        return {"type": "box", "center": list(self.center), "size": list(self.size),
                "faces": [p.to_dict() for p in self.faces]}


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]
    radius: float
    pattern: Pattern

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius,
                "pattern": self.pattern.to_dict()}


Primitive = Union[Box, Sphere]


def _primitive_from_dict(d: dict) -> Primitive:
    if d["type"] == "box":
        return Box(tuple(d["center"]), tuple(d["size"]),
                   tuple(Pattern.from_dict(p) for p in d["faces"]))
    if d["type"] == "sphere":
        return Sphere(tuple(d["center"]), float(d["radius"]), Pattern.from_dict(d["pattern"]))
    raise ValueError(f"unknown primitive type {d['type']!r}")


@dataclass(frozen=True)
class SceneDescription:
    """Axis-aligned room, floor at z = 0, origin at the floor centre."""

    name: str
    room_width: float               # along x
    room_depth: float               # along y
    room_height: float              # along z
    objects: Tuple[Primitive, ...] = ()
    wall_albedos: Tuple[Color, Color, Color, Color] = ((0.8,) * 3,) * 4   # -x, +x, -y, +y
    floor_albedo: Color = (0.6, 0.45, 0.3)
    ceiling_albedo: Color = (0.95, 0.95, 0.95)

    def __post_init__(self):
        if min(self.room_width, self.room_depth, self.room_height) <= 0:
            raise ValueError("room dimensions must be positive")
        lo, hi = self.bounds()
        for obj in self.objects:
            olo, ohi = obj.bounds()
            if np.any(olo < lo) or np.any(ohi > hi) or np.any(olo[:2] <= lo[:2]) or np.any(ohi[:2] >= hi[:2]):
                raise ValueError(f"object {obj} is not inside the room shell")

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        hw, hd = self.room_width / 2, self.room_depth / 2
        return np.array([-hw, -hd, 0.0]), np.array([hw, hd, self.room_height])

    @property
    def diagonal(self) -> float:
        return math.sqrt(self.room_width ** 2 + self.room_depth ** 2 + self.room_height ** 2)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "room_width": self.room_width,
            "room_depth": self.room_depth,
            "room_height": self.room_height,
            "objects": [o.to_dict() for o in self.objects],
            "wall_albedos": [list(a) for a in self.wall_albedos],
            "floor_albedo": list(self.floor_albedo),
            "ceiling_albedo": list(self.ceiling_albedo),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDescription":
        return cls(
            d["name"], float(d["room_width"]), float(d["room_depth"]), float(d["room_height"]),
            tuple(_primitive_from_dict(o) for o in d["objects"]),
            tuple(tuple(a) for a in d["wall_albedos"]),
            tuple(d["floor_albedo"]), tuple(d["ceiling_albedo"]),
        )


@dataclass
class ViewRecord:
    rgb: np.ndarray                 # H x W x 3 in [0, 1]
    depth: np.ndarray               # H x W, Euclidean meters
    seg: np.ndarray                 # H x W uint8 class ids
    intrinsics: CameraIntrinsics
    pose: Pose
    prior: Optional[np.ndarray] = None   # H x W meters, 0 = no prior
    split: str = "train"
    station: int = 0
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# presets

PRESETS = ("empty_room", "bedroom_like", "livingroom_like")


def _rand_color(rng, lo=0.15, hi=0.9) -> Color:
    return tuple(float(x) for x in rng.uniform(lo, hi, size=3))


def _rand_pattern(rng) -> Pattern:
    kind = ("checker", "gradient", "solid")[int(rng.integers(0, 3))]
    return Pattern(kind, _rand_color(rng), _rand_color(rng), float(rng.uniform(0.1, 0.3)))


def _box(rng, center, size, textured=True) -> Box:
    if textured:
        faces = tuple(_rand_pattern(rng) for _ in range(6))
    else:
        faces = (Pattern("solid", _rand_color(rng)),) * 6
    return Box(tuple(float(c) for c in center), tuple(float(s) for s in size), faces)


def _against_wall(rng, room_w, room_d, wall: str, size, along_range, gap=0.05):
    """Centre of a floor-standing box pushed against one wall."""
    sx, sy, sz = size
    t = float(rng.uniform(*along_range))
    if wall == "+y":
        return (t, room_d / 2 - gap - sy / 2, sz / 2)
    if wall == "-y":
        return (t, -room_d / 2 + gap + sy / 2, sz / 2)
    if wall == "+x":
        return (room_w / 2 - gap - sx / 2, t, sz / 2)
    return (-room_w / 2 + gap + sx / 2, t, sz / 2)


def build_scene(preset: str, seed: int = 0) -> SceneDescription:
    """Deterministic scene for ``(preset, seed)``.

    Furniture stays against the walls so the central stations are free.
    """
    if preset not in PRESETS:
        raise UnknownPreset(preset)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, PRESETS.index(preset)])
    walls = tuple(tuple(float(x) for x in c) for c in
                  ((0.82, 0.78, 0.70), (0.74, 0.80, 0.82), (0.86, 0.84, 0.80), (0.78, 0.74, 0.80)))
    if preset == "empty_room":
        return SceneDescription("empty_room", 6.0, 8.0, 3.8, (), walls)

    if preset == "bedroom_like":
        w, d, h = 6.0, 8.0, 3.8
        objs = []
        bed = (1.6, 2.0, 0.55)
        objs.append(_box(rng, _against_wall(rng, w, d, "+y", bed, (-1.2, 1.2)), bed))
        wardrobe = (0.6, 1.4, 2.1)
        objs.append(_box(rng, _against_wall(rng, w, d, "-x", wardrobe, (-2.5, 2.5)), wardrobe))
        desk = (1.2, 0.6, 0.75)
        desk_c = _against_wall(rng, w, d, "-y", desk, (-1.8, 1.8))
        objs.append(_box(rng, desk_c, desk))
        nightstand = (0.45, 0.45, 0.5)
        objs.append(_box(rng, _against_wall(rng, w, d, "+x", nightstand, (2.2, 3.2)), nightstand))
        r = 0.2
        objs.append(Sphere((desk_c[0], desk_c[1], desk[2] + r + 1e-3), r, _rand_pattern(rng)))
        r2 = float(rng.uniform(0.25, 0.4))
        objs.append(Sphere((w / 2 - 0.05 - r2, float(rng.uniform(-2.5, 0.5)), r2), r2, _rand_pattern(rng)))
        return SceneDescription("bedroom_like", w, d, h, tuple(objs), walls)

    w, d, h = 10.0, 10.0, 3.4
    objs = []
    sofa = (2.2, 0.9, 0.8)
    sofa_c = _against_wall(rng, w, d, "-y", sofa, (-2.5, 2.5))
    objs.append(_box(rng, sofa_c, sofa))
    table = (1.2, 0.6, 0.45)
    objs.append(_box(rng, (sofa_c[0], sofa_c[1] + 1.3, table[2] / 2), table))
    shelf = (0.4, 1.8, 2.0)
    objs.append(_box(rng, _against_wall(rng, w, d, "+x", shelf, (-3.5, 3.5)), shelf))
    chair = (0.8, 0.8, 0.9)
    objs.append(_box(rng, _against_wall(rng, w, d, "-x", chair, (-3.5, 3.5)), chair))
    cabinet = (1.6, 0.5, 1.0)
    cab_c = _against_wall(rng, w, d, "+y", cabinet, (-3.5, 3.5))
    objs.append(_box(rng, cab_c, cabinet))
    r = 0.3
    objs.append(Sphere((cab_c[0], cab_c[1] - 0.1, cabinet[2] + r + 1e-3), r, _rand_pattern(rng)))
    for _ in range(2):
        rr = float(rng.uniform(0.2, 0.45))
        cx = float(rng.choice([-1, 1]) * rng.uniform(2.5, 4.5 - rr))
        cy = float(rng.choice([-1, 1]) * rng.uniform(2.5, 4.5 - rr))
        objs.append(Sphere((cx, cy, rr), rr, _rand_pattern(rng)))
    return SceneDescription("livingroom_like", w, d, h, tuple(objs), walls)


# --------------------------------------------------------------------------
# tracing

def _shade(normals: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, AMBIENT + (1.0 - AMBIENT) * np.maximum(0.0, normals @ LIGHT_DIR))


def _pattern_color(p: Pattern, a: np.ndarray, b: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Texture colour from two in-surface coordinates (a, b) and a gradient parameter g."""
    ca, cb = np.asarray(p.color_a), np.asarray(p.color_b)
    if p.kind == "solid":
        return np.broadcast_to(ca, a.shape + (3,))
    if p.kind == "checker":
        parity = (np.floor(a / p.cell) + np.floor(b / p.cell)).astype(np.int64) % 2
        return np.where(parity[..., None] == 0, ca, cb)
    if p.kind == "gradient":
        g = np.clip(g, 0.0, 1.0)[..., None]
        return (1 - g) * ca + g * cb
    raise ValueError(f"unknown pattern kind {p.kind!r}")


def _safe_inv(d: np.ndarray) -> np.ndarray:
    tiny = np.where(d >= 0, 1e-300, -1e-300)
    return 1.0 / np.where(np.abs(d) < 1e-300, tiny, d)


def _check_origins(scene: SceneDescription, origins: np.ndarray):
    lo, hi = scene.bounds()
    if not np.all((origins > lo) & (origins < hi)):
        raise OriginOutsideRoom("ray origin not strictly inside the room shell")
    for obj in scene.objects:
        if isinstance(obj, Box):
            olo, ohi = obj.bounds()
            inside = np.all((origins >= olo) & (origins <= ohi), axis=-1)
        else:
            inside = np.linalg.norm(origins - np.asarray(obj.center), axis=-1) <= obj.radius
        if np.any(inside):
            raise OriginOutsideRoom("ray origin inside a furniture primitive")


def trace_rays(scene: SceneDescription, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit colour, Euclidean depth and class for a batch of unit rays (M, 3)."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    _check_origins(scene, origins)
    m = len(origins)
    lo, hi = scene.bounds()
    inv = _safe_inv(dirs)

    # room shell: exit distance along each axis
    t_axes = np.where(dirs > 0, (hi - origins) * inv, (lo - origins) * inv)
    t_axes = np.where(np.abs(dirs) < 1e-300, np.inf, t_axes)
    axis = np.argmin(t_axes, axis=1)
    best_t = t_axes[np.arange(m), axis]
    positive = dirs[np.arange(m), axis] > 0
    normals = np.zeros((m, 3))
    normals[np.arange(m), axis] = np.where(positive, -1.0, 1.0)
    points = origins + best_t[:, None] * dirs

    cls = np.full(m, WALL, dtype=np.uint8)
    cls[(axis == 2) & ~positive] = FLOOR
    cls[(axis == 2) & positive] = CEILING
    albedo = np.empty((m, 3))
    albedo[cls == FLOOR] = scene.floor_albedo
    albedo[cls == CEILING] = scene.ceiling_albedo
    for k, (ax, pos) in enumerate(((0, False), (0, True), (1, False), (1, True))):
        sel = (axis == ax) & (positive == pos)
        albedo[sel] = scene.wall_albedos[k]
    hit_obj = np.full(m, -1)

    for oi, obj in enumerate(scene.objects):
        if isinstance(obj, Box):
            olo, ohi = obj.bounds()
            t1 = (olo - origins) * inv
            t2 = (ohi - origins) * inv
            tmin = np.minimum(t1, t2)
            tnear = tmin.max(axis=1)
            tfar = np.maximum(t1, t2).min(axis=1)
            hit = (tnear <= tfar) & (tnear > 0) & (tnear < best_t)
            if not np.any(hit):
                continue
            fax = np.argmax(tmin, axis=1)
            idx = np.nonzero(hit)[0]
            best_t[idx] = tnear[idx]
            normals[idx] = 0.0
            sgn = np.where(dirs[idx, fax[idx]] > 0, -1.0, 1.0)
            normals[idx, fax[idx]] = sgn
            p = origins[idx] + tnear[idx, None] * dirs[idx]
            points[idx] = p
            cls[idx] = OTHER
            hit_obj[idx] = oi
            size = np.asarray(obj.size)
            for face in range(6):
                ax, upper = divmod(face, 2)
                fsel = (fax[idx] == ax) & ((sgn > 0) == bool(upper))
                if not np.any(fsel):
                    continue
                others = [k for k in range(3) if k != ax]
                pf = p[fsel]
                g = (pf[:, others[1]] - olo[others[1]]) / size[others[1]]
                albedo[idx[fsel]] = _pattern_color(obj.faces[face], pf[:, others[0]], pf[:, others[1]], g)
        else:
            c = np.asarray(obj.center)
            oc = origins - c
            b = np.einsum("ij,ij->i", oc, dirs)
            disc = b * b - (np.einsum("ij,ij->i", oc, oc) - obj.radius ** 2)
            with np.errstate(invalid="ignore"):
                t = -b - np.sqrt(disc)
            hit = (disc >= 0) & (t > 0) & (t < best_t)
            if not np.any(hit):
                continue
            idx = np.nonzero(hit)[0]
            best_t[idx] = t[idx]
            p = origins[idx] + t[idx, None] * dirs[idx]
            points[idx] = p
            normals[idx] = (p - c) / obj.radius
            cls[idx] = OTHER
            hit_obj[idx] = oi
            rel = p - c
            theta = np.arctan2(rel[:, 1], rel[:, 0]) * obj.radius
            g = (rel[:, 2] + obj.radius) / (2 * obj.radius)
            albedo[idx] = _pattern_color(obj.pattern, theta, rel[:, 2], g)

    color = np.clip(albedo * _shade(normals)[:, None], 0.0, 1.0)
    return color, best_t, cls


def trace_ray(scene: SceneDescription, ray: Ray):
    color, depth, cls = trace_rays(scene, ray.origin[None], ray.direction[None])
    return color[0], float(depth[0]), int(cls[0])


def render_view(scene: SceneDescription, intrinsics: CameraIntrinsics, pose: Pose) -> ViewRecord:
    origins, dirs = pixel_rays(intrinsics, pose)
    h, w = intrinsics.height, intrinsics.width
    color, depth, cls = trace_rays(scene, origins.reshape(-1, 3), dirs.reshape(-1, 3))
    return ViewRecord(color.reshape(h, w, 3), depth.reshape(h, w), cls.reshape(h, w),
                      intrinsics, pose)


def split_stations(n_stations: int, seed: int, eval_fraction: float = 0.25) -> np.ndarray:
    """Boolean per station: True when held out for evaluation."""
    held = np.zeros(n_stations, dtype=bool)
    if n_stations < 2:
        return held
    n_eval = max(1, int(round(eval_fraction * n_stations)))
    order = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 7919]).permutation(n_stations)
    held[order[:n_eval]] = True
    return held


def render_rig(scene: SceneDescription, rig: RigConfig) -> list[ViewRecord]:
    intr = rig.intrinsics()
    rig_poses = generate_rig_poses(rig, scene.bounds())
    n_stations = rig.stations[0] * rig.stations[1]
    held = split_stations(n_stations, rig.seed)
    views = []
    for rp in rig_poses:
        v = render_view(scene, intr, rp.pose)
        v.split = "eval" if held[rp.station] else "train"
        v.station = rp.station
        v.extra = {"kind": rp.kind}
        views.append(v)
    return views


def generate_dataset(scene: SceneDescription, rig: RigConfig, out_path, depth_scale: float = 0.001):
    """Render every rig view and write the dataset directory."""
    from .dataset import write_dataset

    views = render_rig(scene, rig)
    write_dataset(views, {"scene": scene.to_dict(), "rig": rig.to_dict(), "depth_scale": depth_scale},
                  Path(out_path))
    return views
