"""Dense depth priors for floor, ceiling and wall pixels.

Floor and ceiling come from the calibrated frame (z = 0 and z = room height)
or, without calibration, from the plane through three camera positions shifted
by the camera height. Walls are fitted to the points where wall pixels meet
floor or ceiling pixels, lifted onto the floor/ceiling planes; every
architectural pixel then gets the Euclidean distance from its ray origin to
the corresponding plane.

Two extensions over the bare single-image construction:

* wall pixels form 4-connected components and each component may hold
  several walls (corners); walls are separated with a seeded line RANSAC
  in floor coordinates, and a wall seen along only one seam is assumed
  perpendicular to the floor;
* :func:`compute_dataset_priors` pools per-view wall fits across all views
  and sharpens each pooled plane with a max-margin linear program over the
  seam pixel pairs, which removes most of the half-pixel seam uncertainty.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, optimize

from .camera import CameraIntrinsics, image_point_rays, pixel_rays
from .errors import AmbiguousFloor, Collinear, Degenerate
from .geometry import (Plane, Pose, Ray, fit_plane_least_squares, intersect_rays_plane,
                       orient_normal, parallel_plane_at_distance, plane_from_three_points,
                       ray_plane_intersect)
from .scene import CEILING, FLOOR, OTHER, WALL

_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class CalibrationInput:
    mode: str                      # "calibrated" | "uncalibrated"
    room_height: float
    camera_height: float = 0.0
    camera_positions: tuple = ()

    def __post_init__(self):
        if self.mode not in ("calibrated", "uncalibrated"):
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        if self.room_height <= 0:
            raise ValueError("room_height must be positive")
        if self.mode == "uncalibrated":
            if not (self.room_height > self.camera_height > 0):
                raise ValueError("need room_height > camera_height > 0")
            if len(self.camera_positions) < 3:
                raise ValueError("uncalibrated mode needs at least three camera positions")


@dataclass(frozen=True)
class PriorConfig:
    max_residual: float = 0.02     # m, rms residual above which a wall fit is rejected
    max_normal_up: float = 0.5     # |n . up| above which a "wall" is too horizontal
    min_points: int = 3
    inlier_tol: float = 0.08       # m, line RANSAC inlier band in floor coordinates
    ransac_hypotheses: int = 256
    max_walls_per_component: int = 6
    extent_tol: float = 0.05       # m, slack on the along-wall extent test
    footprint_slack: float = 0.5   # m, slack on the pooled-wall footprint radius
    corner_clearance: float = 0.1  # m, seam pairs this close to another wall skip the LP
    refine: bool = True
    seed: int = 0


@dataclass
class WallComponent:
    label: int
    pixels: np.ndarray             # (k, 2) row, col of member wall pixels
    points: np.ndarray             # (n, 3) seam points lifted through the shared pixel edge
    inner: np.ndarray              # (n, 3) neighbour pixel centre lifted (room side of the wall)
    outer: np.ndarray              # (n, 3) wall pixel centre lifted (beyond the wall)
    border: np.ndarray             # (n,) FLOOR or CEILING
    discarded: bool = False
    reason: str = ""


@dataclass
class WallFit:
    component: int
    plane: Optional[Plane]
    residual: float
    accepted: bool
    reason: str = ""
    method: str = "tls"            # "tls" | "vertical" | "pooled" | "pooled+lp"
    extent: tuple = (-np.inf, np.inf)
    point_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    extra: dict = field(default_factory=dict)


@dataclass
class PriorMap:
    depth: np.ndarray              # H x W meters, 0 where absent
    source: np.ndarray             # H x W class id the prior came from, 0 where absent
    walls: list = field(default_factory=list)

    @property
    def mask(self) -> np.ndarray:
        return self.depth > 0


# --------------------------------------------------------------------------
# floor and ceiling

def up_vector(floor: Plane, ceiling: Plane) -> np.ndarray:
    """Unit normal pointing from the floor towards the ceiling."""
    return floor.normal if ceiling.offset > floor.offset else -floor.normal


def _first_noncollinear(positions) -> tuple:
    pts = [np.asarray(p, dtype=np.float64) for p in positions]
    for a, b, c in itertools.combinations(pts, 3):
        try:
            plane_from_three_points(a, b, c)
            return a, b, c
        except Collinear:
            continue
    raise Collinear("all camera positions are collinear")


def estimate_floor_ceiling_planes(calib: CalibrationInput,
                                  sample_floor_ray: Optional[Ray] = None) -> tuple[Plane, Plane]:
    if calib.mode == "calibrated":
        up = np.array([0.0, 0.0, 1.0])
        return Plane(up, 0.0), Plane(up, calib.room_height)
    s_cam = plane_from_three_points(*_first_noncollinear(calib.camera_positions))
    if sample_floor_ray is None:
        raise ValueError("uncalibrated mode needs a ray through a floor pixel")
    h = calib.camera_height
    below = parallel_plane_at_distance(s_cam, -h)
    above = parallel_plane_at_distance(s_cam, +h)
    hit_below = ray_plane_intersect(sample_floor_ray, below) is not None
    hit_above = ray_plane_intersect(sample_floor_ray, above) is not None
    if hit_below == hit_above:
        raise AmbiguousFloor("floor ray meets both or neither candidate floor plane")
    rest = calib.room_height - h
    if hit_below:
        return below, parallel_plane_at_distance(s_cam, rest)
    return above, parallel_plane_at_distance(s_cam, -rest)


# --------------------------------------------------------------------------
# wall borders

def extract_wall_borders(seg: np.ndarray, floor: Plane, ceiling: Plane,
                         intrinsics: CameraIntrinsics, pose: Pose) -> list[WallComponent]:
    """Wall components with their seam points lifted onto the floor/ceiling planes.

    Each (wall pixel, floor-or-ceiling 4-neighbour) pair yields one seam point:
    the ray through the midpoint of the shared pixel edge meets the
    neighbour's plane there. The lifts of both pixel centres are kept too,
    they bracket the true seam.
    """
    seg = np.asarray(seg)
    h, w = seg.shape
    labels, count = ndimage.label(seg == WALL)
    if count == 0:
        return []
    rows, cols, lab, dr, dc, cls = [], [], [], [], [], []
    padded = np.pad(seg, 1, constant_values=255)
    for dy, dx in _NEIGHBOURS:
        nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        for c in (FLOOR, CEILING):
            r, q = np.nonzero((labels > 0) & (nb == c))
            rows.append(r); cols.append(q); lab.append(labels[r, q])
            dr.append(np.full(len(r), dy)); dc.append(np.full(len(r), dx)); cls.append(np.full(len(r), c))
    rows, cols, lab, dr, dc, cls = (np.concatenate(a) for a in (rows, cols, lab, dr, dc, cls))
    order = np.lexsort((dc, dr, cols, rows, lab))
    rows, cols, lab, dr, dc, cls = (a[order] for a in (rows, cols, lab, dr, dc, cls))

    def lift(u, v, plane_sel):
        o, d = image_point_rays(intrinsics, pose, u, v)
        t = np.full(len(u), np.nan)
        for c, plane in ((FLOOR, floor), (CEILING, ceiling)):
            s = plane_sel == c
            if np.any(s):
                t[s] = intersect_rays_plane(o[s], d[s], plane)
        return o + t[:, None] * d

    uc, vc = cols + 0.5, rows + 0.5
    mid = lift(uc + dc / 2.0, vc + dr / 2.0, cls)
    inner = lift(uc + dc, vc + dr, cls)
    outer = lift(uc, vc, cls)
    ok = np.all(np.isfinite(mid) & np.isfinite(inner) & np.isfinite(outer), axis=1)

    comps = []
    pix_r, pix_c = np.nonzero(labels)
    pix_l = labels[pix_r, pix_c]
    for k in range(1, count + 1):
        sel = (lab == k) & ok
        pixels = np.stack([pix_r[pix_l == k], pix_c[pix_l == k]], axis=1)
        comp = WallComponent(k, pixels, mid[sel], inner[sel], outer[sel], cls[sel].astype(np.uint8))
        if len(comp.points) < 3:
            comp.discarded, comp.reason = True, "fewer than 3 seam points"
        comps.append(comp)
    return comps


# --------------------------------------------------------------------------
# wall planes

def _tls_with_refit(points: np.ndarray) -> tuple[Plane, float]:
    """TLS plane, then drop the single worst point and refit once."""
    plane, res = fit_plane_least_squares(points)
    if len(points) > 3:
        keep = np.ones(len(points), dtype=bool)
        keep[np.argmax(np.abs(plane.signed_distance(points)))] = False
        try:
            p2, _ = fit_plane_least_squares(points[keep])
        except Degenerate:
            return plane, res
        plane = p2
        res = float(np.sqrt(np.mean(plane.signed_distance(points[keep]) ** 2)))
    return plane, res


def _floor_basis(up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(up, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(up, e1)


def _vertical_plane(points: np.ndarray, up: np.ndarray) -> tuple[Plane, float]:
    """Plane containing ``up`` that best fits the points' floor-plane projections."""
    e1, e2 = _floor_basis(up)
    q = np.stack([points @ e1, points @ e2], axis=1)

    def fit(qq, pp):
        c = qq.mean(axis=0)
        _, s, vt = np.linalg.svd(qq - c, full_matrices=False)
        if s[0] / np.sqrt(len(qq)) < 1e-9:
            raise Degenerate("seam points coincide")
        n2 = vt[-1]
        n = orient_normal(n2[0] * e1 + n2[1] * e2)
        n /= np.linalg.norm(n)
        plane = Plane(n, float(n @ pp.mean(axis=0)))
        return plane, float(np.sqrt(np.mean(plane.signed_distance(pp) ** 2)))

    plane, res = fit(q, points)
    if len(points) > 3:
        keep = np.ones(len(points), dtype=bool)
        keep[np.argmax(np.abs(plane.signed_distance(points)))] = False
        plane, res = fit(q[keep], points[keep])
    return plane, res


def _extent(plane: Plane, points: np.ndarray, up: np.ndarray) -> tuple[float, float]:
    along = np.cross(plane.normal, up)
    nrm = np.linalg.norm(along)
    if nrm < 1e-9:
        return (-np.inf, np.inf)
    u = points @ (along / nrm)
    return (float(u.min()), float(u.max()))


def _judge(component: int, plane: Plane, res: float, method: str, points, idx, up, cfg) -> WallFit:
    nz = abs(float(plane.normal @ up))
    if nz > cfg.max_normal_up:
        return WallFit(component, plane, res, False, f"too horizontal (|n.up| = {nz:.3f})", method,
                       point_index=idx)
    if res > cfg.max_residual:
        return WallFit(component, plane, res, False, f"residual {res:.4f} m above threshold", method,
                       point_index=idx)
    return WallFit(component, plane, res, True, "", method, _extent(plane, points[idx], up), idx)


def _fit_points(points: np.ndarray, border: np.ndarray, up: np.ndarray) -> tuple[Plane, float, str]:
    """Full 3D TLS when both seams are present and the points span a plane, else a vertical wall."""
    if len(np.unique(border)) > 1:
        try:
            plane, res = _tls_with_refit(points)
            return plane, res, "tls"
        except Degenerate:
            pass
    plane, res = _vertical_plane(points, up)
    return plane, res, "vertical"


def _split_walls(comp: WallComponent, up: np.ndarray, cfg: PriorConfig) -> list[WallFit]:
    pts, border = comp.points, comp.border
    e1, e2 = _floor_basis(up)
    q = np.stack([pts @ e1, pts @ e2], axis=1)
    rng = np.random.default_rng([cfg.seed, comp.label])
    remaining = np.arange(len(pts))
    fits = []
    while len(remaining) >= cfg.min_points and len(fits) < cfg.max_walls_per_component:
        n = len(remaining)
        n_pairs = n * (n - 1) // 2
        if n_pairs <= cfg.ransac_hypotheses:
            pairs = np.array(list(itertools.combinations(range(n), 2)))
        else:
            a = rng.integers(0, n, size=cfg.ransac_hypotheses)
            b = (a + rng.integers(1, n, size=cfg.ransac_hypotheses)) % n
            pairs = np.stack([a, b], axis=1)
        qa, qb = q[remaining[pairs[:, 0]]], q[remaining[pairs[:, 1]]]
        dirs = qb - qa
        lens = np.linalg.norm(dirs, axis=1)
        good = lens > 1e-6
        if not np.any(good):
            break
        qa, dirs, lens = qa[good], dirs[good], lens[good]
        normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1) / lens[:, None]
        dist = np.abs(np.einsum("hnk,hk->hn", q[remaining][None, :, :] - qa[:, None, :], normals))
        counts = (dist < cfg.inlier_tol).sum(axis=1)
        best = int(np.argmax(counts))
        if counts[best] < cfg.min_points:
            break
        inl = remaining[dist[best] < cfg.inlier_tol]
        for _ in range(2):
            try:
                line_plane, _ = _vertical_plane(pts[inl], up)
            except Degenerate:
                break
            d = np.abs(line_plane.signed_distance(pts[remaining]))
            new = remaining[d < cfg.inlier_tol]
            if len(new) < cfg.min_points:
                break
            inl = new
        try:
            plane, res, method = _fit_points(pts[inl], border[inl], up)
        except Degenerate:
            remaining = np.setdiff1d(remaining, inl)
            continue
        fit = _judge(comp.label, plane, res, method, pts, inl, up, cfg)
        if not fit.accepted and method == "tls":
            plane, res = _vertical_plane(pts[inl], up)
            fit = _judge(comp.label, plane, res, "vertical", pts, inl, up, cfg)
        fits.append(fit)
        remaining = np.setdiff1d(remaining, inl)
    if not fits:
        fits.append(WallFit(comp.label, None, np.inf, False, "no wall line found", "none"))
    return fits


def fit_wall_planes(components: Sequence[WallComponent], up=None,
                    config: PriorConfig = PriorConfig()) -> list[WallFit]:
    """Planes for every usable component.

    A component first gets a single TLS plane. If that plane is too
    horizontal the component is rejected; if it is degenerate (one seam
    only) or its residual is too large (several walls) the component is
    split into walls.
    """
    up = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, dtype=np.float64)
    fits = []
    for comp in components:
        if comp.discarded:
            continue
        idx = np.arange(len(comp.points))
        try:
            plane, res = _tls_with_refit(comp.points)
        except Degenerate:
            fits.extend(_split_walls(comp, up, config))
            continue
        fit = _judge(comp.label, plane, res, "tls", comp.points, idx, up, config)
        if fit.accepted or abs(float(plane.normal @ up)) > config.max_normal_up and res <= config.max_residual:
            fits.append(fit)
        else:
            fits.extend(_split_walls(comp, up, config))
    return fits


# --------------------------------------------------------------------------
# prior maps

def _assign_walls(origins, dirs, planes: Sequence[WallFit], up, cfg: PriorConfig,
                  check_extent: bool) -> np.ndarray:
    """Smallest positive hit over candidate wall planes (exit point of a convex room)."""
    best = np.full(len(origins), np.inf)
    for fit in planes:
        t = intersect_rays_plane(origins, dirs, fit.plane)
        if check_extent and np.isfinite(fit.extent[0]):
            along = np.cross(fit.plane.normal, up)
            along /= np.linalg.norm(along)
            u = (origins + np.nan_to_num(t)[:, None] * dirs) @ along
            t = np.where((u >= fit.extent[0] - cfg.extent_tol) & (u <= fit.extent[1] + cfg.extent_tol), t, np.nan)
        t = np.where(np.isfinite(t), t, np.inf)
        best = np.minimum(best, t)
    return best


def _footprint(walls: Sequence[WallFit], up) -> tuple[np.ndarray, float]:
    """Centre and radius (in floor coordinates) of the wall extent endpoints."""
    ends = []
    for fit in walls:
        if not np.isfinite(fit.extent[0]):
            return np.zeros(3), np.inf
        along = np.cross(fit.plane.normal, up)
        along /= np.linalg.norm(along)
        base = fit.plane.offset * fit.plane.normal
        ends += [base + e * along for e in fit.extent]
    ends = np.array(ends)
    ends -= np.outer(ends @ up, up)
    center = ends.mean(axis=0)
    return center, float(np.max(np.linalg.norm(ends - center, axis=1)))


def compute_prior_map(seg: np.ndarray, intrinsics: CameraIntrinsics, pose: Pose,
                      calib: CalibrationInput, planes: Optional[tuple] = None,
                      wall_planes: Optional[Sequence[WallFit]] = None,
                      config: PriorConfig = PriorConfig()) -> PriorMap:
    """Prior depth for one view.

    ``planes`` is an optional precomputed (floor, ceiling) pair. With
    ``wall_planes`` given (for instance from :func:`pool_wall_planes`) every
    wall pixel uses those; otherwise walls are fitted from this view alone.
    """
    seg = np.asarray(seg)
    origins, dirs = pixel_rays(intrinsics, pose)
    o, d = origins.reshape(-1, 3), dirs.reshape(-1, 3)
    flat = seg.reshape(-1)
    if planes is None:
        ray = None
        if calib.mode == "uncalibrated":
            fl = np.nonzero(flat == FLOOR)[0]
            if len(fl) == 0:
                raise AmbiguousFloor("no floor pixel to disambiguate the floor plane")
            ray = Ray(o[fl[0]], d[fl[0]])
        planes = estimate_floor_ceiling_planes(calib, ray)
    floor, ceiling = planes
    up = up_vector(floor, ceiling)

    depth = np.zeros(len(flat))
    for c, plane in ((FLOOR, floor), (CEILING, ceiling)):
        s = flat == c
        if np.any(s):
            depth[s] = np.nan_to_num(intersect_rays_plane(o[s], d[s], plane), nan=0.0)

    ws = np.nonzero(flat == WALL)[0]
    fits = []
    if len(ws):
        if wall_planes is None:
            comps = extract_wall_borders(seg, floor, ceiling, intrinsics, pose)
            fits = fit_wall_planes(comps, up, config)
            labels = np.zeros(seg.shape, dtype=np.int64)
            for comp in comps:
                labels[comp.pixels[:, 0], comp.pixels[:, 1]] = comp.label
            lab = labels.reshape(-1)[ws]
            for comp in comps:
                cf = [f for f in fits if f.component == comp.label and f.accepted]
                if not cf:
                    continue
                sel = ws[lab == comp.label]
                t = _assign_walls(o[sel], d[sel], cf, up, config, check_extent=True)
                depth[sel] = np.where(np.isfinite(t), t, 0.0)
        else:
            accepted = [f for f in wall_planes if f.accepted]
            if accepted:
                t = _assign_walls(o[ws], d[ws], accepted, up, config, check_extent=False)
                # a wall pixel sees its wall before the floor or ceiling plane; a later hit
                # means the true wall is missing from the pooled set
                for plane in (floor, ceiling):
                    tb = intersect_rays_plane(o[ws], d[ws], plane)
                    t = np.where(np.isfinite(tb) & (t > tb), np.inf, t)
                # nor may it land outside the footprint the pooled walls span
                center, radius = _footprint(accepted, up)
                hit = o[ws] + np.where(np.isfinite(t), t, 0.0)[:, None] * d[ws] - center
                horiz = hit - np.outer(hit @ up, up)
                t = np.where(np.linalg.norm(horiz, axis=1) > radius + config.footprint_slack, np.inf, t)
                depth[ws] = np.where(np.isfinite(t), t, 0.0)
            fits = list(wall_planes)
    depth = depth.reshape(seg.shape)
    source = np.where(depth > 0, seg, OTHER).astype(np.uint8)
    return PriorMap(depth, source, fits)


# --------------------------------------------------------------------------
# dataset-level pooling

@dataclass
class _SeamSet:
    points: list = field(default_factory=list)
    inner: list = field(default_factory=list)
    outer: list = field(default_factory=list)
    border: list = field(default_factory=list)
    n_views: int = 0


def _same_wall(a: Plane, b: Plane, angle_cos=np.cos(np.radians(5.0)), offset_tol=0.15) -> bool:
    dot = float(a.normal @ b.normal)
    if abs(dot) < angle_cos:
        return False
    return abs(a.offset - np.sign(dot) * b.offset) < offset_tol


def _outward(plane: Plane, inside_points: np.ndarray) -> Plane:
    if np.mean(plane.signed_distance(inside_points)) > 0:
        return Plane(-plane.normal, -plane.offset)
    return plane


def refine_plane_max_margin(plane: Plane, inner: np.ndarray, outer: np.ndarray,
                            up: Optional[np.ndarray] = None, iterations: int = 3,
                            max_shift: float = 0.1) -> tuple[Plane, float]:
    """Sharpen a wall plane with the seam pixel pairs.

    Every ``inner`` point must lie on the room side of the wall and every
    ``outer`` point beyond it. The plane (linearised around the current
    estimate) maximising the smallest clearance to both sets is found by a
    linear program. With ``up`` given the plane is kept perpendicular to the
    floor (pairs from a single seam line cannot fix the tilt). Returns the
    new plane and the achieved margin (negative when the constraints could
    not all be met).
    """
    p = _outward(plane, inner)
    margin = -np.inf
    for _ in range(iterations):
        n0, d0 = p.normal, p.offset
        if up is None:
            a = np.array([1.0, 0.0, 0.0]) if abs(n0[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            u = np.cross(n0, a); u /= np.linalg.norm(u)
            v = np.cross(n0, u)
            tilt = 0.05
        else:
            u = np.cross(up, n0); u /= np.linalg.norm(u)
            v = np.cross(n0, u)
            tilt = 0.0
        # variables: (alpha, beta, e, m); maximise m
        a_out = np.stack([-(outer @ u), -(outer @ v), np.ones(len(outer)), np.ones(len(outer))], axis=1)
        b_out = outer @ n0 - d0
        a_in = np.stack([inner @ u, inner @ v, -np.ones(len(inner)), np.ones(len(inner))], axis=1)
        b_in = d0 - inner @ n0
        res = optimize.linprog(
            c=[0.0, 0.0, 0.0, -1.0],
            A_ub=np.vstack([a_out, a_in]), b_ub=np.concatenate([b_out, b_in]),
            bounds=[(-0.05, 0.05), (-tilt, tilt), (-max_shift, max_shift), (None, None)],
            method="highs",
        )
        if res.status != 0:
            break
        alpha, beta, e, margin = res.x
        n = n0 + alpha * u + beta * v
        scale = np.linalg.norm(n)
        p = Plane(n / scale, (d0 + e) / scale)
    n = orient_normal(p.normal)
    return Plane(n, p.offset if n @ p.normal > 0 else -p.offset), float(margin)


def pool_wall_planes(components_per_view: Sequence[Sequence[WallComponent]],
                     fits_per_view: Sequence[Sequence[WallFit]],
                     up: np.ndarray, inside_point: np.ndarray,
                     config: PriorConfig = PriorConfig()) -> list[WallFit]:
    """Merge per-view wall fits that describe the same wall and refit them jointly."""
    clusters: list[tuple[Plane, _SeamSet]] = []
    for comps, fits in zip(components_per_view, fits_per_view):
        by_label = {c.label: c for c in comps}
        seen = set()
        for fit in sorted((f for f in fits if f.accepted), key=lambda f: -len(f.point_index)):
            comp = by_label[fit.component]
            idx = fit.point_index
            for ci, (ref, seams) in enumerate(clusters):
                if _same_wall(ref, fit.plane):
                    break
            else:
                clusters.append((fit.plane, _SeamSet()))
                ci = len(clusters) - 1
            seams = clusters[ci][1]
            seams.points.append(comp.points[idx]); seams.inner.append(comp.inner[idx])
            seams.outer.append(comp.outer[idx]); seams.border.append(comp.border[idx])
            if ci not in seen:
                seams.n_views += 1
                seen.add(ci)

    pooled = []
    for ci, (_, seams) in enumerate(clusters):
        pts = np.concatenate(seams.points)
        border = np.concatenate(seams.border)
        try:
            plane, res, method = _fit_points(pts, border, up)
        except Degenerate:
            continue
        fit = _judge(-1 - ci, plane, res, "pooled", pts, np.arange(len(pts)), up, config)
        fit.extra = {"n_views": seams.n_views, "n_points": len(pts)}
        pooled.append((fit, seams))

    if config.refine:
        accepted = [f for f, _ in pooled if f.accepted]
        for fit, seams in pooled:
            if not fit.accepted:
                continue
            inner = np.concatenate(seams.inner)
            outer = np.concatenate(seams.outer)
            # seam pairs near another wall are ambiguous about which wall they bound
            keep = np.ones(len(inner), dtype=bool)
            for other in accepted:
                if other is fit:
                    continue
                keep &= np.abs(other.plane.signed_distance(outer)) > config.corner_clearance
                keep &= np.abs(other.plane.signed_distance(inner)) > config.corner_clearance
            if keep.sum() < config.min_points:
                continue
            plane = _outward(fit.plane, np.asarray(inside_point)[None])
            border = np.concatenate(seams.border)[keep]
            vertical = None if len(np.unique(border)) > 1 else up
            refined, margin = refine_plane_max_margin(plane, inner[keep], outer[keep], vertical)
            if margin > -config.max_residual and _same_wall(refined, fit.plane):
                fit.plane = refined
                fit.method = "pooled+lp"
                fit.extra["margin"] = margin

    # the room is convex: no wall may have better-supported seam points behind it
    kept: list[tuple[WallFit, np.ndarray]] = []
    inside = np.asarray(inside_point, dtype=np.float64)[None]
    for fit, seams in sorted(pooled, key=lambda fs: -fs[0].extra["n_points"]):
        pts = np.concatenate(seams.points)
        if fit.accepted and kept:
            plane = _outward(fit.plane, inside)
            others = np.concatenate([p for _, p in kept])
            behind = plane.signed_distance(others) > config.corner_clearance
            if behind.mean() > 0.01:
                fit.accepted = False
                fit.reason = "cuts through better-supported walls"
        if fit.accepted:
            kept.append((fit, pts))
    return [f for f, _ in pooled]


def compute_dataset_priors(views: Sequence, calib: CalibrationInput,
                           config: PriorConfig = PriorConfig(), pool: bool = True):
    """Prior maps for every view, with wall planes shared across views.

    Returns ``(priors, info)`` where ``priors`` is a list of :class:`PriorMap`
    and ``info`` holds the floor/ceiling planes and the pooled wall fits.
    """
    ray = None
    if calib.mode == "uncalibrated":
        for v in views:
            fl = np.argwhere(np.asarray(v.seg) == FLOOR)
            if len(fl):
                o, d = image_point_rays(v.intrinsics, v.pose, fl[0, 1] + 0.5, fl[0, 0] + 0.5)
                ray = Ray(o, d)
                break
        if ray is None:
            raise AmbiguousFloor("no floor pixel in any view")
    floor, ceiling = estimate_floor_ceiling_planes(calib, ray)
    up = up_vector(floor, ceiling)
    if not pool:
        priors = [compute_prior_map(v.seg, v.intrinsics, v.pose, calib, (floor, ceiling), config=config)
                  for v in views]
        return priors, {"floor": floor, "ceiling": ceiling, "walls": []}

    comps_all, fits_all = [], []
    for v in views:
        comps = extract_wall_borders(v.seg, floor, ceiling, v.intrinsics, v.pose)
        comps_all.append(comps)
        fits_all.append(fit_wall_planes(comps, up, config))
    inside = np.mean([v.pose.translation for v in views], axis=0)
    walls = pool_wall_planes(comps_all, fits_all, up, inside, config)
    priors = [compute_prior_map(v.seg, v.intrinsics, v.pose, calib, (floor, ceiling),
                                wall_planes=walls, config=config) for v in views]
    return priors, {"floor": floor, "ceiling": ceiling, "walls": walls}
