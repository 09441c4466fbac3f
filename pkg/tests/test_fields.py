import numpy as np
import pytest

from conftest import fd_check, make_params
from pointfill.errors import FormatError
from pointfill.fields import (
    DensityParams,
    EncodingConfig,
    FieldGrads,
    color_eval,
    color_forward,
    density_from_sdf,
    load_checkpoint,
    mlp_backward,
    positional_encoding,
    save_checkpoint,
    sdf_eval,
    sdf_forward,
    sphere_init,
    spatial_grad_backward,
    spatial_grad_forward,
)


class TestPositionalEncoding:
    def test_zero_input(self):
        cfg = EncodingConfig(levels=6)
        out = positional_encoding(np.zeros(3), cfg)
        assert out.shape == (39,)
        assert np.all(out[:3] == 0.0)
        sin_idx = [3 + 6 * k + i for k in range(6) for i in range(3)]
        cos_idx = [6 + 6 * k + i for k in range(6) for i in range(3)]
        assert np.all(out[sin_idx] == 0.0)
        assert np.all(out[cos_idx] == 1.0)

    def test_output_dimension(self):
        for levels in range(9):
            cfg = EncodingConfig(levels=levels)
            assert cfg.out_dim == 3 + 6 * levels
            out = positional_encoding(np.ones(3), cfg)
            assert out.shape == (3 + 6 * levels,)

    def test_deterministic(self):
        cfg = EncodingConfig()
        x = np.array([0.1, -0.7, 2.3])
        assert np.array_equal(
            positional_encoding(x, cfg), positional_encoding(x, cfg)
        )

    def test_formula(self):
        cfg = EncodingConfig(levels=2)
        x = np.array([0.3, -0.2, 1.1])
        out = positional_encoding(x, cfg)
        expect = np.concatenate(
            [x, np.sin(x), np.cos(x), np.sin(2 * x), np.cos(2 * x)]
        )
        assert np.allclose(out, expect, atol=0)


class TestSdfEval:
    def test_gradient_matches_finite_differences(self):
        h = 1e-4
        worst = 0.0
        for seed in range(100):
            params = make_params(seed=seed)
            rng = np.random.default_rng(1000 + seed)
            x = rng.normal(scale=0.5, size=3)
            _, g = sdf_eval(params, x)
            for c in range(3):
                xp, xm = x.copy(), x.copy()
                xp[c] += h
                xm[c] -= h
                fp, _ = sdf_eval(params, xp)
                fm, _ = sdf_eval(params, xm)
                fd = (fp - fm) / (2 * h)
                if abs(fd) > 1e-6 or abs(g[c]) > 1e-6:
                    worst = max(
                        worst, abs(g[c] - fd) / max(abs(fd), abs(g[c]))
                    )
        assert worst < 1e-4

    def test_zero_weights_constant(self):
        params = make_params(seed=0)
        for w in params.sdf_weights:
            w[:] = 0.0
        params.sdf_biases[3][:] = 1.25
        f, g = sdf_eval(params, np.array([0.3, 0.2, -0.7]))
        assert f == 1.25
        assert np.all(g == 0.0)

    def test_negative_inside_after_sphere_init(self):
        params = sphere_init(EncodingConfig(), radius=0.5, seed=0)
        f, _ = sdf_eval(params, np.zeros(3))
        assert f < 0


class TestColorEval:
    def test_zero_final_layer_gives_half(self):
        params = make_params(seed=1)
        params.color_weights[3][:] = 0.0
        params.color_biases[3][:] = 0.0
        rgb = color_eval(params, np.array([0.1, 0.2, 0.3]))
        assert np.allclose(rgb, 0.5)

    def test_range(self, rng):
        params = make_params(seed=2, scale=2.0)
        x = rng.normal(size=(200, 3))
        rgb = color_eval(params, x)
        assert np.all(rgb >= 0.0) and np.all(rgb <= 1.0)

    def test_parameter_gradients(self, rng):
        for seed in range(10):
            params = make_params(seed=seed)
            x = np.random.default_rng(seed).normal(scale=0.4, size=(4, 3))
            dout = np.random.default_rng(seed + 1).normal(size=(4, 3))
            _, cache = color_forward(params, x)
            grads, _ = mlp_backward(cache, dout)

            def loss(p):
                rgb, _ = color_forward(p, x)
                return float(np.sum(dout * rgb))

            assert fd_check(loss, params, grads, rng, n_coords=25) < 1e-4


class TestMlpBackward:
    def test_zero_output_gradient(self):
        params = make_params(seed=3)
        _, cache = sdf_forward(params, np.zeros((5, 3)))
        grads, _ = mlp_backward(cache, np.zeros(5))
        assert all(np.all(a == 0.0) for a in grads.arrays())

    def test_linearity_in_output_gradient(self, rng):
        params = make_params(seed=4)
        x = rng.normal(size=(6, 3))
        dout = rng.normal(size=6)
        _, cache = sdf_forward(params, x)
        g1, _ = mlp_backward(cache, dout)
        g3, _ = mlp_backward(cache, 3.0 * dout)
        for a, b in zip(g1.arrays(), g3.arrays()):
            assert np.allclose(3.0 * a, b, rtol=1e-12, atol=0)

    def test_full_network_fd(self, rng):
        for seed in range(20):
            params = make_params(seed=seed, hidden=8)
            x = np.random.default_rng(200 + seed).normal(
                scale=0.5, size=(5, 3)
            )
            dout = np.random.default_rng(300 + seed).normal(size=5)
            _, cache = sdf_forward(params, x)
            grads, _ = mlp_backward(cache, dout)

            def loss(p):
                f, _ = sdf_forward(p, x)
                return float(dout @ f)

            assert fd_check(loss, params, grads, rng, n_coords=25) < 1e-4

    def test_shape_mismatch(self):
        params = make_params(seed=5)
        _, cache = sdf_forward(params, np.zeros((5, 3)))
        with pytest.raises(ValueError):
            mlp_backward(cache, np.zeros(6))

    def test_input_gradient_through_encoding(self, rng):
        params = make_params(seed=6)
        x = rng.normal(size=(3, 3))
        dout = rng.normal(size=3)
        _, cache = sdf_forward(params, x)
        _, dx = mlp_backward(cache, dout, need_dx=True)
        h = 1e-6
        for i in range(3):
            for c in range(3):
                xp, xm = x.copy(), x.copy()
                xp[i, c] += h
                xm[i, c] -= h
                fp, _ = sdf_forward(params, xp)
                fm, _ = sdf_forward(params, xm)
                fd = dout @ (fp - fm) / (2 * h)
                assert abs(fd - dx[i, c]) < 1e-6 * max(1.0, abs(fd))


class TestSpatialGradient:
    def test_double_backward_fd(self, rng):
        for seed in range(10):
            params = make_params(seed=seed)
            x = np.random.default_rng(400 + seed).normal(
                scale=0.5, size=(4, 3)
            )
            dg = np.random.default_rng(500 + seed).normal(size=(4, 3))
            g, cache = spatial_grad_forward(params, x)
            grads = spatial_grad_backward(cache, dg)

            def loss(p):
                gv, _ = spatial_grad_forward(p, x)
                return float(np.sum(dg * gv))

            assert fd_check(loss, params, grads, rng, n_coords=25) < 1e-4

    def test_matches_sdf_eval(self, rng):
        params = make_params(seed=11)
        x = rng.normal(size=(7, 3))
        g, _ = spatial_grad_forward(params, x)
        _, g2 = sdf_eval(params, x)
        assert np.allclose(g, g2, atol=1e-12)


class TestSphereInit:
    @pytest.mark.parametrize("radius", [0.5, 0.9])
    def test_center_value(self, radius):
        params = sphere_init(EncodingConfig(), radius, seed=0)
        f, _ = sdf_eval(params, np.zeros(3))
        assert abs(f + radius) <= 0.1 * radius

    @pytest.mark.parametrize("radius", [0.5, 0.9])
    def test_surface_values(self, radius):
        params = sphere_init(EncodingConfig(), radius, seed=1)
        rng = np.random.default_rng(0)
        d = rng.normal(size=(100, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        f, _ = sdf_eval(params, radius * d)
        assert np.abs(f).max() <= 0.1 * radius

    def test_gradient_norm_near_unit(self):
        params = sphere_init(EncodingConfig(), 0.5, seed=2)
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(500, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        pts *= rng.uniform(0, 1, size=(500, 1)) ** (1 / 3)
        _, g = sdf_eval(params, pts)
        mean_norm = np.linalg.norm(g, axis=1).mean()
        assert 0.8 <= mean_norm <= 1.2

    def test_reproducible(self):
        a = sphere_init(EncodingConfig(), 0.5, seed=7)
        b = sphere_init(EncodingConfig(), 0.5, seed=7)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            sphere_init(EncodingConfig(), 0.0, seed=0)


class TestDensity:
    def test_zero_crossing_is_half_alpha(self):
        dp = DensityParams(alpha=100.0, beta=1e-3)
        assert density_from_sdf(0.0, dp) == 50.0

    def test_limits(self):
        dp = DensityParams(alpha=100.0, beta=1e-3)
        assert density_from_sdf(10.0, dp) < 1e-290
        assert np.isclose(density_from_sdf(-10.0, dp), 100.0)

    def test_closed_form(self):
        dp = DensityParams(alpha=100.0, beta=1e-3)
        expect = 100.0 * (1.0 - 0.5 * np.exp(-1.0))
        assert np.isclose(density_from_sdf(-0.001, dp), expect, rtol=1e-12)

    def test_strictly_decreasing(self):
        # strict where float64 can resolve the CDF differences, and
        # non-increasing everywhere
        dp = DensityParams(alpha=100.0, beta=1e-3)
        f = np.linspace(-0.03, 0.03, 1000)
        assert np.all(np.diff(density_from_sdf(f, dp)) < 0)
        wide = np.linspace(-10.0, 10.0, 1000)
        assert np.all(np.diff(density_from_sdf(wide, dp)) <= 0)

    def test_range(self):
        dp = DensityParams(alpha=100.0, beta=1e-3)
        f = np.linspace(-1, 1, 101)
        sigma = density_from_sdf(f, dp)
        assert np.all(sigma >= 0.0) and np.all(sigma <= dp.alpha)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            DensityParams(alpha=0.0, beta=1e-3)
        with pytest.raises(ValueError):
            DensityParams(alpha=1.0, beta=0.0)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        params = make_params(seed=9, hidden=16, levels=6)
        path = tmp_path / "ckpt.pfck"
        save_checkpoint(path, params, metadata={"epoch": 3})
        loaded, meta = load_checkpoint(path)
        assert meta["epoch"] == 3
        assert loaded.encoding == params.encoding
        for a, b in zip(params.arrays(), loaded.arrays()):
            assert np.array_equal(a, b)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pfck"
        path.write_bytes(b"NOTACKPT" + b"\0" * 32)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        params = make_params(seed=10)
        path = tmp_path / "ckpt.pfck"
        save_checkpoint(path, params)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 64])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestFieldGrads:
    def test_clip_global_norm(self):
        params = make_params(seed=12)
        grads = FieldGrads.zeros_like(params)
        grads.sdf_weights[0][:] = 3.0
        norm = grads.global_norm()
        pre = grads.clip_global_norm(1.0)
        assert np.isclose(pre, norm)
        assert np.isclose(grads.global_norm(), 1.0)

    def test_clip_noop_when_small(self):
        params = make_params(seed=13)
        grads = FieldGrads.zeros_like(params)
        grads.sdf_biases[0][:] = 1e-3
        before = [a.copy() for a in grads.arrays()]
        grads.clip_global_norm(10.0)
        for a, b in zip(grads.arrays(), before):
            assert np.array_equal(a, b)
