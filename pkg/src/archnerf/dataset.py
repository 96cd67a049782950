"""On-disk dataset format.

Layout::

    manifest.json
    rgb/{view:05}.png     8-bit RGB
    depth/{view:05}.png   16-bit gray, value = round(depth / depth_scale)
    seg/{view:05}.png     8-bit gray, class ids {0, 1, 2, 3}
    prior/{view:05}.png   optional, same encoding as depth, 0 = no prior

The manifest stores per-view intrinsics and a 4x4 camera-to-world matrix.
Floats are written with Python's shortest round-trip repr so poses survive a
write/read cycle bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics
from .errors import DepthOverflow, MalformedManifest, MissingFile, NonRigidPose
from .geometry import Pose, is_rotation
from .scene import ViewRecord

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
VALID_CLASSES = (0, 1, 2, 3)


@dataclass
class DatasetManifest:
    scene_name: str
    room_height: float
    depth_scale: float
    views: list
    units: str = "meters"
    extra: dict = field(default_factory=dict)

    def split_indices(self, split: str) -> list[int]:
        return [i for i, v in enumerate(self.views) if v["split"] == split]


def quantize_depth(depth: np.ndarray, depth_scale: float) -> np.ndarray:
    q = np.round(np.asarray(depth, dtype=np.float64) / depth_scale)
    if np.any(q > 65535):
        raise DepthOverflow(f"depth {float(np.max(depth)):.3f} m exceeds 65535 * {depth_scale}")
    if np.any(q < 0):
        raise ValueError("negative depth")
    return q.astype(np.uint16)


def _save_png(arr: np.ndarray, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def _load_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as im:
        return np.asarray(im).copy()


def _dump_json(obj, path: Path):
    text = json.dumps(obj, indent=1, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def view_entry(i: int, v: ViewRecord) -> dict:
    entry = {
        "index": i,
        "rgb": f"rgb/{i:05d}.png",
        "depth": f"depth/{i:05d}.png",
        "seg": f"seg/{i:05d}.png",
        "split": v.split,
        "station": int(v.station),
        "intrinsics": v.intrinsics.to_dict(),
        "camera_to_world": v.pose.matrix().tolist(),
    }
    if v.prior is not None:
        entry["prior"] = f"prior/{i:05d}.png"
    if v.extra:
        entry["extra"] = v.extra
    return entry


def write_dataset(views: list[ViewRecord], fields: dict, out_dir) -> None:
    """Write views plus a manifest.

    ``fields`` carries ``scene`` (a scene dict or at least name/room_height),
    ``depth_scale`` and any other JSON-able metadata.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    depth_scale = float(fields.get("depth_scale", 0.001))
    if views:
        shape = views[0].rgb.shape
        if any(v.rgb.shape != shape for v in views):
            raise ValueError("all views must share image dimensions")
    scene = fields.get("scene", {})
    entries = []
    for i, v in enumerate(views):
        rgb8 = np.round(np.clip(v.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
        _save_png(rgb8, out / f"rgb/{i:05d}.png")
        _save_png(quantize_depth(v.depth, depth_scale), out / f"depth/{i:05d}.png")
        _save_png(np.asarray(v.seg, dtype=np.uint8), out / f"seg/{i:05d}.png")
        if v.prior is not None:
            _save_png(quantize_depth(v.prior, depth_scale), out / f"prior/{i:05d}.png")
        entries.append(view_entry(i, v))
    manifest = {
        "format_version": FORMAT_VERSION,
        "scene_name": scene.get("name", fields.get("scene_name", "unnamed")),
        "units": "meters",
        "room_height": float(scene.get("room_height", fields.get("room_height", 0.0))),
        "depth_scale": depth_scale,
        "views": entries,
    }
    for k, val in fields.items():
        if k not in ("depth_scale", "scene_name", "room_height"):
            manifest[k] = val
    _dump_json(manifest, out / MANIFEST)


def write_priors(out_dir, priors: dict[int, np.ndarray]) -> None:
    """Add prior maps to an existing dataset and register them in the manifest."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
    scale = float(manifest["depth_scale"])
    for i, prior in sorted(priors.items()):
        _save_png(quantize_depth(prior, scale), out / f"prior/{i:05d}.png")
        manifest["views"][i]["prior"] = f"prior/{i:05d}.png"
    _dump_json(manifest, out / MANIFEST)


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise MalformedManifest(f"missing key {key!r} in {where}")
    return d[key]


def read_dataset(path, load_images: bool = True) -> tuple[DatasetManifest, list[ViewRecord]]:
    root = Path(path)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise MissingFile(str(mpath))
    try:
        raw = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"manifest is not valid JSON: {exc}") from exc
    depth_scale = float(_require(raw, "depth_scale", "manifest"))
    entries = _require(raw, "views", "manifest")
    extra = {k: v for k, v in raw.items()
             if k not in ("scene_name", "room_height", "depth_scale", "views", "units")}
    manifest = DatasetManifest(str(_require(raw, "scene_name", "manifest")),
                               float(_require(raw, "room_height", "manifest")),
                               depth_scale, entries, raw.get("units", "meters"), extra)
    views = []
    for n, e in enumerate(entries):
        where = f"view {n}"
        m = np.asarray(_require(e, "camera_to_world", where), dtype=np.float64)
        if m.shape != (4, 4):
            raise MalformedManifest(f"{where}: camera_to_world must be 4x4")
        if not is_rotation(m[:3, :3], 1e-6) or not np.allclose(m[3], [0, 0, 0, 1]):
            raise NonRigidPose(f"{where}: camera_to_world is not a rigid transform")
        try:
            intr = CameraIntrinsics.from_dict(_require(e, "intrinsics", where))
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedManifest(f"{where}: bad intrinsics ({exc})") from exc
        split = _require(e, "split", where)
        if split not in ("train", "eval"):
            raise MalformedManifest(f"{where}: unknown split {split!r}")
        pose = Pose(m[:3, :3], m[:3, 3])
        for key in ("rgb", "depth", "seg"):
            if not (root / _require(e, key, where)).is_file():
                raise MissingFile(str(root / e[key]))
        if "prior" in e and not (root / e["prior"]).is_file():
            raise MissingFile(str(root / e["prior"]))
        if not load_images:
            views.append(ViewRecord(None, None, None, intr, pose, None, split, int(e.get("station", 0)),
                                    e.get("extra", {})))
            continue
        rgb = _load_png(root / e["rgb"]).astype(np.float64) / 255.0
        depth = _load_png(root / e["depth"]).astype(np.float64) * depth_scale
        seg = _load_png(root / e["seg"]).astype(np.uint8)
        if rgb.shape != (intr.height, intr.width, 3) or depth.shape != (intr.height, intr.width) \
                or seg.shape != depth.shape:
            raise MalformedManifest(f"{where}: image dimensions do not match intrinsics")
        if not np.all(np.isin(seg, VALID_CLASSES)):
            bad = sorted(set(np.unique(seg).tolist()) - set(VALID_CLASSES))
            raise MalformedManifest(f"{where}: segmentation contains unknown class ids {bad}")
        prior = None
        if "prior" in e:
            prior = _load_png(root / e["prior"]).astype(np.float64) * depth_scale
        views.append(ViewRecord(rgb, depth, seg, intr, pose, prior, split, int(e.get("station", 0)),
                                e.get("extra", {})))
    return manifest, views


def dataset_hash(path) -> str:
    """SHA-256 over the manifest and every file it references, in manifest order."""
    root = Path(path)
    h = hashlib.sha256()
    mbytes = (root / MANIFEST).read_bytes()
    h.update(mbytes)
    raw = json.loads(mbytes)
    for e in raw["views"]:
        for key in ("rgb", "depth", "seg", "prior"):
            if key in e:
                h.update((root / e[key]).read_bytes())
    return h.hexdigest()
