import numpy as np
import pytest

from archnerf.camera import intrinsics_from_fov, look_rotation, pixel_rays
from archnerf.errors import AmbiguousFloor, Collinear
from archnerf.geometry import Plane, Pose, Ray
from archnerf.priors import (CalibrationInput, WallComponent, compute_dataset_priors, compute_prior_map,
                             estimate_floor_ceiling_planes, extract_wall_borders, fit_wall_planes,
                             refine_plane_max_margin)
from archnerf.scene import CEILING, FLOOR, OTHER, WALL, build_scene, render_view

CAL = CalibrationInput("calibrated", 3.8)
Z0, ZH = Plane([0, 0, 1], 0.0), Plane([0, 0, 1], 3.8)


def _component(points, border):
    points = np.asarray(points, float)
    return WallComponent(1, np.zeros((0, 2), int), points, points, points, np.asarray(border, np.uint8))


def _seam_points(x, n, rng, height=3.8):
    y = rng.uniform(-3, 3, n)
    z = np.where(np.arange(n) % 2 == 0, 0.0, height)
    return np.column_stack([np.full(n, x), y, z]), np.where(z == 0, FLOOR, CEILING)


class TestFloorCeiling:
    def test_calibrated(self):
        floor, ceil = estimate_floor_ceiling_planes(CAL)
        assert floor.allclose(Z0) and ceil.allclose(ZH)

    def test_uncalibrated_reproduces_calibrated(self):
        calib = CalibrationInput("uncalibrated", 3.8, 1.5, ((0, 0, 1.5), (1, 0, 1.5), (0, 2, 1.5)))
        floor, ceil = estimate_floor_ceiling_planes(calib, Ray([0, 0, 1.5], [0, 0, -1]))
        assert floor.allclose(Z0, atol=1e-9) and ceil.allclose(ZH, atol=1e-9)

    def test_uncalibrated_upside_down_camera_plane(self):
        # a floor ray pointing along +normal picks the other candidate
        calib = CalibrationInput("uncalibrated", 3.8, 1.5, ((0, 0, 1.5), (1, 0, 1.5), (0, 2, 1.5)))
        floor, ceil = estimate_floor_ceiling_planes(calib, Ray([0, 0, 1.5], [0, 0, 1]))
        assert floor.offset == pytest.approx(3.0) and ceil.offset == pytest.approx(-0.8)

    def test_collinear_cameras(self):
        calib = CalibrationInput("uncalibrated", 3.8, 1.5, ((0, 0, 1.5), (1, 0, 1.5), (2, 0, 1.5)))
        with pytest.raises(Collinear):
            estimate_floor_ceiling_planes(calib, Ray([0, 0, 1.5], [0, 0, -1]))

    def test_ambiguous_floor(self):
        calib = CalibrationInput("uncalibrated", 3.8, 1.5, ((0, 0, 1.5), (1, 0, 1.5), (0, 2, 1.5)))
        with pytest.raises(AmbiguousFloor):
            estimate_floor_ceiling_planes(calib, Ray([0, 0, 1.5], [1, 0, 0]))

    def test_calibration_validation(self):
        with pytest.raises(ValueError):
            CalibrationInput("uncalibrated", 3.8, 4.0, ((0, 0, 0),) * 3)


class TestWallBorders:
    def test_fronto_parallel_wall(self):
        scene = build_scene("empty_room", 0)
        k = intrinsics_from_fov(40, 72, 27.0, 40.0)
        pose = Pose(look_rotation(90.0, 0.0), [0, -3.5, 1.5])
        v = render_view(scene, k, pose)
        assert (v.seg == FLOOR).any() and (v.seg == CEILING).any()
        comps = extract_wall_borders(v.seg, Z0, ZH, k, pose)
        assert len(comps) == 1 and not comps[0].discarded
        c = comps[0]
        assert set(np.unique(c.border)) == {FLOOR, CEILING}
        z = c.points[:, 2]
        np.testing.assert_allclose(z[c.border == FLOOR], 0.0, atol=1e-6)
        np.testing.assert_allclose(z[c.border == CEILING], 3.8, atol=1e-6)
        # seam points sit on the wall to within a pixel footprint
        assert np.max(np.abs(c.points[:, 1] - 4.0)) < 0.2

    def test_occluded_component_discarded(self):
        seg = np.full((20, 20), OTHER, np.uint8)
        seg[5:10, 5:10] = WALL
        seg[0, :] = FLOOR
        k = intrinsics_from_fov(20, 20, 60.0, 60.0)
        comps = extract_wall_borders(seg, Z0, ZH, k, Pose(look_rotation(0, 0), [0, 0, 1.5]))
        assert len(comps) == 1 and comps[0].discarded
        assert fit_wall_planes(comps) == []

    def test_no_walls(self):
        seg = np.full((8, 8), FLOOR, np.uint8)
        k = intrinsics_from_fov(8, 8, 60.0, 60.0)
        assert extract_wall_borders(seg, Z0, ZH, k, Pose(look_rotation(0, -60), [0, 0, 1.5])) == []


class TestFitWallPlanes:
    def test_oracle_wall(self, rng):
        pts, border = _seam_points(3.0, 60, rng)
        (fit,) = fit_wall_planes([_component(pts, border)])
        assert fit.accepted
        np.testing.assert_allclose(np.abs(fit.plane.normal), [1, 0, 0], atol=1e-9)
        assert abs(fit.plane.offset) == pytest.approx(3.0, abs=1e-9)
        assert fit.residual < 1e-6

    def test_single_outlier_removed(self, rng):
        pts, border = _seam_points(3.0, 200, rng)
        pts = pts + rng.normal(scale=1e-4, size=pts.shape) * [1, 0, 0]
        pts[17, 0] += 0.5
        (fit,) = fit_wall_planes([_component(pts, border)])
        assert fit.accepted
        assert abs(abs(fit.plane.offset) - 3.0) < 2e-3

    def test_horizontal_rejected(self, rng):
        pts = np.column_stack([rng.uniform(-3, 3, 30), rng.uniform(-3, 3, 30), np.zeros(30)])
        pts[::2, 2] = 0.001
        fits = fit_wall_planes([_component(pts, np.full(30, FLOOR))])
        assert len(fits) == 1 and not fits[0].accepted

    def test_corner_split_into_two_walls(self, rng):
        a, ba = _seam_points(3.0, 40, rng)
        b = a[:, [1, 0, 2]] * [1, 4.0 / 3.0, 1]
        b[:, 1] = 4.0
        fits = fit_wall_planes([_component(np.vstack([a, b]), np.concatenate([ba, ba]))])
        acc = sorted((f for f in fits if f.accepted), key=lambda f: abs(f.plane.normal[0]))
        assert len(acc) == 2
        assert abs(acc[0].plane.offset) == pytest.approx(4.0, abs=1e-9)
        assert abs(acc[1].plane.offset) == pytest.approx(3.0, abs=1e-9)


class TestPriorMap:
    def test_straight_down(self):
        k = intrinsics_from_fov(11, 11, 40.0, 40.0)
        pose = Pose(np.diag([1.0, -1.0, -1.0]), [0, 0, 1.5])
        seg = np.full((11, 11), FLOOR, np.uint8)
        seg[0, 0] = OTHER
        pm = compute_prior_map(seg, k, pose, CAL)
        assert pm.depth[5, 5] == pytest.approx(1.5, abs=1e-12)
        assert pm.depth[0, 0] == 0.0 and pm.source[0, 0] == OTHER

    def test_view_priors_exact_for_single_view_fits(self, small_views):
        for v in small_views[:15:3]:
            pm = compute_prior_map(v.seg, v.intrinsics, v.pose, CAL)
            assert np.all(pm.depth[v.seg == OTHER] == 0)
            fc = np.isin(v.seg, (FLOOR, CEILING))
            np.testing.assert_allclose(pm.depth[fc], v.depth[fc], atol=1e-9)

    def test_dataset_priors(self, small_views):
        priors, info = compute_dataset_priors(small_views, CAL)
        for v, p in zip(small_views, priors):
            assert np.all(p.depth[v.seg == OTHER] == 0)
            assert np.all(p.depth >= 0)
            assert np.all(np.isin(p.source[p.mask], (FLOOR, CEILING, WALL)))
            m = p.mask & (v.seg == WALL)
            if m.any():
                assert np.max(np.abs(p.depth[m] - v.depth[m])) < 0.05

    def test_missing_pooled_wall_leaves_pixels_uncovered(self, small_views):
        # drop one pooled wall: its pixels must not borrow a far hit on a neighbouring plane
        _, info = compute_dataset_priors(small_views, CAL)
        walls = [w for w in info["walls"] if w.accepted]
        gone, kept = walls[0], walls[1:]
        diag = np.linalg.norm(np.array(build_scene("bedroom_like", 0).bounds())[1]
                              - np.array(build_scene("bedroom_like", 0).bounds())[0])
        lost = 0
        for v in small_views:
            p = compute_prior_map(v.seg, v.intrinsics, v.pose, CAL, (Z0, ZH), wall_planes=kept)
            assert p.depth.max() <= diag
            o, d = pixel_rays(v.intrinsics, v.pose)
            on_gone = np.abs(gone.plane.signed_distance(o + v.depth[..., None] * d)) < 0.05
            m = p.mask & (v.seg == WALL) & ~on_gone
            if m.any():
                assert np.max(np.abs(p.depth[m] - v.depth[m])) < 0.05
            lost += np.sum((v.seg == WALL) & on_gone & ~p.mask)
        assert lost > 0

    def test_uncalibrated_matches_calibrated(self, small_views):
        pos = tuple(tuple(v.pose.translation) for v in small_views)
        calib = CalibrationInput("uncalibrated", 3.8, 1.5, pos[::15] + (pos[0] + np.array([0, 1.0, 0]),))
        _, cal = compute_dataset_priors(small_views[:3], CAL, pool=False)
        _, unc = compute_dataset_priors(small_views[:3], calib, pool=False)
        assert unc["floor"].allclose(cal["floor"], atol=1e-9)
        assert unc["ceiling"].allclose(cal["ceiling"], atol=1e-9)

    def test_view_consistency(self, small_views):
        # pixels of different views that meet the same floor point get consistent lifts
        priors, _ = compute_dataset_priors(small_views, CAL)
        for v, p in zip(small_views[:6], priors[:6]):
            o, d = pixel_rays(v.intrinsics, v.pose)
            pts = o + p.depth[..., None] * d
            np.testing.assert_allclose(pts[(v.seg == FLOOR) & p.mask][:, 2], 0.0, atol=1e-9)


class TestMaxMargin:
    def test_plane_separates_brackets(self, rng):
        n = np.array([1.0, 0, 0])
        seam = np.column_stack([np.full(50, 3.0), rng.uniform(-3, 3, 50), np.repeat([0.0, 3.8], 25)])
        inner = seam - n * rng.uniform(0.001, 0.02, (50, 1))
        outer = seam + n * rng.uniform(0.001, 0.02, (50, 1))
        g = np.array([0.999, 0.03, 0.0])
        guess = Plane(g / np.linalg.norm(g), 3.05)
        refined, margin = refine_plane_max_margin(guess, inner, outer, np.array([0, 0, 1.0]))
        assert margin > 0
        s = np.sign(refined.normal[0])
        assert np.all(refined.signed_distance(inner) * s < 0)
        assert np.all(refined.signed_distance(outer) * s > 0)
        assert abs(abs(refined.offset) - 3.0) < 0.02
