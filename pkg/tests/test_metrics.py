import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from archnerf.errors import EmptyMask, ShapeMismatch, TooSmall
from archnerf.metrics import EvalReport, ViewMetrics, depth_rmse, psnr, ssim


def ssim_direct(a, b, size=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Window-by-window SSIM with an explicit 2-D Gaussian; slow but obvious."""
    x = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    h, wd, c = a.shape
    vals = []
    for ch in range(c):
        for i in range(h - size + 1):
            for j in range(wd - size + 1):
                pa = a[i:i + size, j:j + size, ch]
                pb = b[i:i + size, j:j + size, ch]
                ma, mb = np.sum(w * pa), np.sum(w * pb)
                va = np.sum(w * (pa - ma) ** 2)
                vb = np.sum(w * (pb - mb) ** 2)
                cov = np.sum(w * (pa - ma) * (pb - mb))
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_is_capped(self, rng):
        a = rng.uniform(size=(8, 8, 3))
        assert psnr(a, a) == 100.0

    def test_uniform_offset(self):
        a = np.full((4, 5, 3), 0.3)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4, 3), elements=st.floats(0, 1)),
           arrays(np.float64, (4, 4, 3), elements=st.floats(0, 1)))
    def test_symmetric_and_bounded(self, a, b):
        p = psnr(a, b)
        assert p == psnr(b, a)
        assert 0.0 <= p <= 100.0


class TestSsim:
    def test_identical(self, rng):
        a = rng.uniform(size=(16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_below_one(self, rng):
        a = rng.uniform(size=(16, 16, 3))
        assert ssim(a, 1.0 - a) < 1.0

    def test_matches_direct_reference(self, rng):
        a = rng.uniform(size=(20, 24, 3))
        b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_direct(a, b), abs=1e-6)

    def test_smooth_images_match_reference(self):
        yy, xx = np.mgrid[0:15, 0:17] / 16.0
        a = np.stack([xx, yy, xx * yy], axis=-1)
        b = np.stack([xx ** 2, yy, 0.5 + 0 * xx], axis=-1)
        assert ssim(a, b) == pytest.approx(ssim_direct(a, b), abs=1e-6)

    def test_too_small(self):
        with pytest.raises(TooSmall):
            ssim(np.zeros((10, 40, 3)), np.zeros((10, 40, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ssim(np.zeros((12, 12, 3)), np.zeros((12, 13, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_range(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.uniform(size=(12, 12, 3)), r.uniform(size=(12, 12, 3))
        assert -1.0 <= ssim(a, b) <= 1.0


class TestDepthRmse:
    def test_zero(self, rng):
        d = rng.uniform(1, 5, size=(6, 7))
        assert depth_rmse(d, d, np.ones_like(d, bool)) == 0.0

    def test_constant_error(self, rng):
        d = rng.uniform(1, 5, size=(6, 7))
        assert depth_rmse(d + 0.003, d, np.ones_like(d, bool)) == pytest.approx(0.003, abs=1e-12)

    def test_mask_selects(self):
        d = np.zeros((2, 2))
        r = np.array([[1.0, 5.0], [5.0, 5.0]])
        m = np.array([[True, False], [False, False]])
        assert depth_rmse(r, d, m) == 1.0

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            depth_rmse(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2), bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            depth_rmse(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2), bool))


class TestEvalReport:
    def test_json_round_trip(self):
        views = [ViewMetrics(3, 31.25, 0.91, 0.0123), ViewMetrics(7, 28.5, 0.87, None)]
        rep = EvalReport.from_views(views, {"mode": "depth_boundl", "seed": 0})
        assert rep.mean_psnr == pytest.approx(29.875)
        assert rep.mean_depth_rmse == pytest.approx(0.0123)
        back = EvalReport.from_dict(json.loads(json.dumps(rep.to_dict())))
        assert back == rep

    def test_no_depth_gives_none(self):
        rep = EvalReport.from_views([ViewMetrics(0, 20.0, 0.5, None)])
        assert rep.mean_depth_rmse is None
