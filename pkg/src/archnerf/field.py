"""Dense voxel radiance field with trilinear interpolation and Adam.

Raw parameters live on a node grid spanning the field's bounding box.
Interpolation happens on raw values; activations are applied afterwards:
density = softplus(raw), color = sigmoid(raw). Outside the box the field is
empty (density 0) and mid-gray.

Checkpoint layout (all integers and floats little-endian)::

    8 bytes   magic b"ARNFCKPT"
    4 bytes   uint32 format version (1)
    8 bytes   uint64 header length L
    L bytes   UTF-8 JSON header, keys sorted, no whitespace
    payload   float64 arrays back to back, C order, in header["arrays"] order

The header records the resolution, bounding box, Adam hyperparameters and
step, and the name/shape of every payload array. Equal fields and optimizer
states always produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._kernels_py import corner_weights, interpolate, locate, sigmoid, softplus
from .errors import ShapeMismatch

INIT_RAW_DENSITY = -2.0
INIT_COLOR_RANGE = 0.1
BOX_MARGIN = 0.05

MAGIC = b"ARNFCKPT"
CHECKPOINT_VERSION = 1


class VoxelField:
    """Raw parameters on an (nx, ny, nz) node grid spanning [lo, hi].

    ``params`` is (nx, ny, nz, 4): channel 0 raw density, 1..3 raw color.
    ``raw_density`` and ``raw_color`` are views into it.
    """

    def __init__(self, params, lo, hi):
        self.params = np.ascontiguousarray(params, dtype=np.float64)
        self.lo = np.ascontiguousarray(lo, dtype=np.float64).reshape(3)
        self.hi = np.ascontiguousarray(hi, dtype=np.float64).reshape(3)
        if self.params.ndim != 4 or self.params.shape[3] != 4:
            raise ShapeMismatch("params must be shaped (nx, ny, nz, 4)")
        if min(self.params.shape[:3]) < 2:
            raise ValueError("field resolution must be at least 2 along every axis")
        if not np.all(self.hi > self.lo):
            raise ValueError("bounding box must have positive extent")

    @classmethod
    def from_arrays(cls, raw_density, raw_color, lo, hi) -> "VoxelField":
        raw_density = np.asarray(raw_density, dtype=np.float64)
        raw_color = np.asarray(raw_color, dtype=np.float64)
        if raw_density.ndim != 3 or raw_color.shape != raw_density.shape + (3,):
            raise ShapeMismatch("need raw_density (nx, ny, nz) and raw_color (nx, ny, nz, 3)")
        return cls(np.concatenate([raw_density[..., None], raw_color], axis=-1), lo, hi)

    @property
    def raw_density(self) -> np.ndarray:
        return self.params[..., 0]

    @property
    def raw_color(self) -> np.ndarray:
        return self.params[..., 1:]

    @property
    def resolution(self) -> tuple:
        return self.params.shape[:3]

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.asarray(self.resolution) - 1)

    def node_position(self, i, j, k) -> np.ndarray:
        return self.lo + np.array([i, j, k], dtype=np.float64) * self.spacing

    def copy(self) -> "VoxelField":
        return VoxelField(self.params.copy(), self.lo.copy(), self.hi.copy())


def room_box(room_bounds, margin: float = BOX_MARGIN):
    """Room shell grown by ``margin`` of its extent on every side."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in room_bounds)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def init_field(resolution, seed: int, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))) -> VoxelField:
    """Near-transparent field with small random colors.

    ``bounds`` is the field box itself; use :func:`room_box` to derive it from
    a room shell.
    """
    res = tuple(int(r) for r in resolution)
    if len(res) != 3 or min(res) < 2:
        raise ValueError(f"resolution needs three components >= 2, got {resolution}")
    rng = np.random.default_rng(seed)
    col = rng.uniform(-INIT_COLOR_RANGE, INIT_COLOR_RANGE, size=res + (3,))
    return VoxelField.from_arrays(np.full(res, INIT_RAW_DENSITY), col, bounds[0], bounds[1])


def query(field: VoxelField, positions):
    """Density and color at one position (3,) or many (..., 3)."""
    pts = np.asarray(positions, dtype=np.float64)
    base, frac, inside = locate(pts, field.lo, field.hi, field.resolution)
    raw = interpolate(field.params, base, frac)
    sigma = np.where(inside, softplus(raw[..., 0]), 0.0)
    color = np.where(inside[..., None], sigmoid(raw[..., 1:]), 0.5)
    if pts.ndim == 1:
        return float(sigma), color
    return sigma, color


class FieldGradient:
    """Dense gradient accumulator laid out like ``VoxelField.params``."""

    def __init__(self, data):
        self.data = data

    @classmethod
    def zeros_like(cls, field: VoxelField) -> "FieldGradient":
        return cls(np.zeros_like(field.params))

    @property
    def density(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def color(self) -> np.ndarray:
        return self.data[..., 1:]


def query_gradient(field: VoxelField, positions, d_sigma, d_color,
                   out: Optional[FieldGradient] = None) -> FieldGradient:
    """Backpropagate dL/dσ and dL/dc at positions into raw-parameter gradients.

    Contributions are added into ``out`` (a fresh zero gradient by default),
    position by position in C order, so a batch gradient is the sum of its
    per-position gradients.
    """
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    d_sigma = np.asarray(d_sigma, dtype=np.float64).reshape(-1)
    d_color = np.asarray(d_color, dtype=np.float64).reshape(-1, 3)
    if out is None:
        out = FieldGradient.zeros_like(field)
    base, frac, inside = locate(pts, field.lo, field.hi, field.resolution)
    raw = interpolate(field.params, base, frac)
    c = sigmoid(raw[:, 1:])
    g_raw = np.zeros((len(pts), 4))
    g_raw[:, 0] = np.where(inside, d_sigma * sigmoid(raw[:, 0]), 0.0)
    g_raw[:, 1:] = np.where(inside[:, None], d_color * c * (1.0 - c), 0.0)
    for (a, b, d), w in corner_weights(frac):
        np.add.at(out.data, (base[:, 0] + a, base[:, 1] + b, base[:, 2] + d), w[:, None] * g_raw)
    return out


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: AdamState, lr: float, backend=None) -> AdamState:
    """Bias-corrected Adam update applied to ``params`` in place.

    No weight decay, no clipping. ``backend`` picks the kernel module (default:
    the active one).
    """
    from .kernels import get_backend

    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and moments must have equal length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape {g.shape} does not match parameter {p.shape}")
        if not p.flags.c_contiguous:
            raise ValueError("parameters must be C-contiguous to be updated in place")
    impl = backend if backend is not None and not isinstance(backend, str) else get_backend(backend)
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        impl.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                         m.reshape(-1), v.reshape(-1), float(lr), state.beta1, state.beta2,
                         state.eps, state.step)
    return state


def save_checkpoint(path, field: VoxelField, state: Optional[AdamState] = None, meta: Optional[dict] = None):
    arrays = [("params", field.params)]
    if state is not None:
        arrays += [("adam_m", state.m[0]), ("adam_v", state.v[0])]
    header = {
        "resolution": list(field.resolution),
        "lo": field.lo.tolist(),
        "hi": field.hi.tolist(),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "adam": None if state is None else {"step": state.step, "beta1": state.beta1,
                                            "beta2": state.beta2, "eps": state.eps},
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(field, adam_state_or_None, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a field checkpoint")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    offset = start + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    field = VoxelField(arrays["params"], header["lo"], header["hi"])
    state = None
    if header["adam"] is not None:
        a = header["adam"]
        state = AdamState([arrays["adam_m"]], [arrays["adam_v"]], a["step"], a["beta1"], a["beta2"], a["eps"])
    return field, state, header["meta"]
