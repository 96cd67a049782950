import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from archnerf.errors import ShapeMismatch
from archnerf.field import (AdamState, VoxelField, adam_step, init_field, load_checkpoint, query,
                            query_gradient, room_box, save_checkpoint)
from archnerf.kernels import available_backends
from archnerf.render import render, RaySamples

BOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def _random_field(seed, res=(4, 5, 3)):
    rng = np.random.default_rng(seed)
    return VoxelField(rng.normal(size=res + (4,)), *BOX)


class TestQuery:
    def test_constant_field(self):
        f = VoxelField(np.zeros((3, 3, 3, 4)), *BOX)
        sigma, color = query(f, [0.3, -0.2, 0.7])
        assert sigma == pytest.approx(np.log(2.0), rel=1e-15)
        np.testing.assert_allclose(color, 0.5)

    def test_outside_box(self):
        f = _random_field(0)
        sigma, color = query(f, [1.5, 0.0, 0.0])
        assert sigma == 0.0
        np.testing.assert_array_equal(color, 0.5)

    def test_node_and_midpoint(self):
        f = VoxelField(np.zeros((3, 3, 3, 4)), *BOX)
        f.raw_density[1, 1, 1] = 2.0
        f.raw_density[2, 1, 1] = -1.0
        f.raw_density[0, 1, 1] = 5.0
        s_node, _ = query(f, f.node_position(1, 1, 1))
        assert s_node == pytest.approx(np.log1p(np.exp(2.0)), rel=1e-14)
        # activation after interpolation, not the mean of activations
        s_mid, _ = query(f, [0.5, 0.0, 0.0])
        assert s_mid == pytest.approx(np.log1p(np.exp(0.5)), rel=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.tuples(*[st.floats(-1, 1)] * 3))
    def test_equal_raw_values_give_constant(self, raw, pos):
        f = VoxelField(np.full((4, 4, 4, 4), raw), *BOX)
        sigma, color = query(f, pos)
        assert sigma == pytest.approx(np.logaddexp(0, raw), rel=1e-12)
        np.testing.assert_allclose(color, 1 / (1 + np.exp(-raw)), rtol=1e-12)

    def test_activation_ranges(self, rng):
        f = _random_field(1)
        f.params *= 20
        sigma, color = query(f, rng.uniform(-1, 1, (200, 3)))
        assert np.all(sigma >= 0)
        assert np.all((color > 0) & (color < 1))


class TestQueryGradient:
    def test_single_node_support(self):
        f = _random_field(2, (3, 3, 3))
        g = query_gradient(f, f.node_position(1, 2, 0), 1.0, np.zeros(3))
        expected = np.zeros_like(f.params)
        expected[1, 2, 0, 0] = 1 / (1 + np.exp(-f.raw_density[1, 2, 0]))
        np.testing.assert_allclose(g.data, expected, atol=1e-15)

    def test_outside_is_zero(self):
        f = _random_field(3)
        g = query_gradient(f, [[2.0, 0, 0], [0, -1.2, 0]], [1.0, 1.0], np.ones((2, 3)))
        assert not g.data.any()

    def test_finite_differences(self, rng):
        f = _random_field(4)
        pts = rng.uniform(-1, 1, (30, 3))
        ws, wc = rng.normal(size=30), rng.normal(size=(30, 3))

        def loss(field):
            s, c = query(field, pts)
            return float(ws @ s + np.sum(wc * c))

        g = query_gradient(f, pts, ws, wc).data
        h = 1e-4
        for idx in [tuple(rng.integers(0, n) for n in f.params.shape) for _ in range(40)]:
            fp, fm = f.copy(), f.copy()
            fp.params[idx] += h
            fm.params[idx] -= h
            fd = (loss(fp) - loss(fm)) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-3 * max(abs(fd), 1e-6) + 1e-9

    def test_batch_is_sum_of_parts(self, rng):
        f = _random_field(5)
        pts = rng.uniform(-1, 1, (20, 3))
        ws, wc = rng.normal(size=20), rng.normal(size=(20, 3))
        total = query_gradient(f, pts, ws, wc).data
        parts = sum(query_gradient(f, pts[i:i + 1], ws[i:i + 1], wc[i:i + 1]).data for i in range(20))
        np.testing.assert_allclose(total, parts, atol=1e-10)


@pytest.mark.parametrize("backend", available_backends())
class TestAdam:
    def test_zero_gradient(self, backend):
        p = np.ones((3, 4))
        st_ = AdamState.for_params([p])
        adam_step([p], [np.zeros_like(p)], st_, 0.1, backend=backend)
        np.testing.assert_array_equal(p, 1.0)
        assert st_.step == 1

    def test_first_step_is_sign(self, backend):
        g = np.array([3.0, -0.01, 1e4])
        for scale in (1.0, 7.5):
            p = np.zeros(3)
            adam_step([p], [scale * g], AdamState.for_params([p]), 0.05, backend=backend)
            np.testing.assert_allclose(p, -0.05 * np.sign(g), rtol=1e-6)

    def test_constant_gradient_limit(self, backend):
        p = np.zeros(2)
        st_ = AdamState.for_params([p])
        prev = p.copy()
        for _ in range(2000):
            prev = p.copy()
            adam_step([p], [np.array([0.3, -2.0])], st_, 0.01, backend=backend)
        np.testing.assert_allclose(p - prev, [-0.01, 0.01], rtol=1e-6)

    def test_hand_rolled_recurrence(self, backend):
        grads = [np.array([1.0, -2.0]), np.array([0.5, 0.0]), np.array([-3.0, 1.0])]
        p = np.array([0.2, -0.4])
        st_ = AdamState.for_params([p])
        ref, m, v = p.copy(), np.zeros(2), np.zeros(2)
        for t, g in enumerate(grads, 1):
            adam_step([p], [g], st_, 0.1, backend=backend)
            m = 0.9 * m + 0.1 * g
            v = 0.99 * v + 0.01 * g * g
            ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
        np.testing.assert_allclose(st_.v[0], v, rtol=1e-14)
        np.testing.assert_allclose(p, ref, rtol=1e-12)

    def test_shape_mismatch(self, backend):
        p = np.zeros(3)
        with pytest.raises(ShapeMismatch):
            adam_step([p], [np.zeros(4)], AdamState.for_params([p]), 0.1, backend=backend)


class TestInit:
    def test_deterministic(self):
        a, b = init_field((4, 4, 4), 3), init_field((4, 4, 4), 3)
        np.testing.assert_array_equal(a.params, b.params)
        assert np.all(a.raw_density == -2.0)
        assert np.all(np.abs(a.raw_color) <= 0.1)

    def test_bad_resolution(self):
        with pytest.raises(ValueError):
            init_field((1, 4, 4), 0)

    def test_transparent_start(self):
        f = init_field((8, 8, 8), 0, room_box(((-3, -4, 0), (3, 4, 3.8))))
        t = np.linspace(0, 5, 129)[:-1] + 5 / 256
        o, d = np.array([0.0, 0.0, 1.5]), np.array([0.0, 1.0, 0.0])
        sigma, color = query(f, o + t[:, None] * d)
        out = render(RaySamples.from_distances(t, 5.0, sigma, color))
        assert 1 - out.accumulation > 0.5

    def test_room_box_margin(self):
        lo, hi = room_box(((-3, -4, 0), (3, 4, 3.8)))
        np.testing.assert_allclose(lo, [-3.3, -4.4, -0.19])
        np.testing.assert_allclose(hi, [3.3, 4.4, 3.99])


class TestCheckpoint:
    def test_round_trip_bytes(self, tmp_path):
        f = _random_field(6)
        st_ = AdamState.for_params([f.params])
        adam_step([f.params], [np.ones_like(f.params)], st_, 0.1)
        save_checkpoint(tmp_path / "a.ckpt", f, st_, {"mode": "x"})
        g, st2, meta = load_checkpoint(tmp_path / "a.ckpt")
        np.testing.assert_array_equal(g.params, f.params)
        np.testing.assert_array_equal(st2.m[0], st_.m[0])
        assert st2.step == 1 and meta == {"mode": "x"}
        save_checkpoint(tmp_path / "b.ckpt", g, st2, meta)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"nonsense" * 4)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")
