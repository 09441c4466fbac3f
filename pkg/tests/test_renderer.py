import numpy as np
import pytest

from conftest import fd_check, make_params
from pointfill import renderer
from pointfill.fields import DensityParams, sdf_forward
from pointfill.geometry import (
    CameraIntrinsics,
    CameraPose,
    Rotation3,
    look_at,
    rodrigues_rotation,
)
from pointfill.renderer import (
    SamplingConfig,
    composite,
    render_backward,
    render_rays_callable,
    render_sensor_with_cache,
    render_view,
    render_view_callable,
    render_view_with_cache,
    sample_distances,
)
from pointfill.synthetic import sphere_sdf

DP = DensityParams(alpha=100.0, beta=1e-3)


def front_cam(distance=2.0):
    return CameraPose(
        rotation=Rotation3.identity(),
        translation=np.array([0.0, 0.0, -distance]),
    )


INTR = CameraIntrinsics(fx=64.0, fy=64.0, cx=15.5, cy=15.5, width=32, height=32)


class TestSampleDistances:
    def test_midpoints(self):
        cfg = SamplingConfig(near=0.0, far=1.0, samples_per_ray=2, stratified=False)
        mu = sample_distances(cfg)
        assert np.allclose(mu, [0.25, 0.75])

    def test_strictly_increasing_for_any_seed(self):
        cfg = SamplingConfig(near=0.5, far=2.0, samples_per_ray=32)
        for seed in range(50):
            mu = sample_distances(cfg, seed=seed)
            assert np.all(np.diff(mu) > 0)

    def test_within_bounds(self):
        cfg = SamplingConfig(near=0.5, far=2.0, samples_per_ray=16)
        for seed in range(20):
            mu = sample_distances(cfg, seed=seed)
            assert mu.min() >= 0.5 and mu.max() <= 2.0

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SamplingConfig(near=1.0, far=1.0, samples_per_ray=4)
        with pytest.raises(ValueError):
            SamplingConfig(near=0.0, far=1.0, samples_per_ray=1)


class TestComposite:
    def test_all_zero_density(self):
        n = 8
        rgb, opacity, depth, w = composite(
            np.zeros(n), np.ones((n, 3)), np.linspace(1, 2, n)
        )
        assert np.all(w == 0.0)
        assert opacity == 0.0
        assert np.all(rgb == 0.0)

    def test_opaque_first_segment(self):
        mu = np.array([1.0, 1.5, 2.0])
        sigma = np.array([1e9, 0.3, 0.3])
        c = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        rgb, opacity, depth, w = composite(sigma, c, mu)
        assert w[0] > 1 - 1e-9
        assert np.allclose(rgb, c[0], atol=1e-6)
        assert abs(depth - 1.0) < 1e-6

    def test_closed_form_two_segments(self):
        mu = np.array([0.5, 1.5])
        sigma = np.array([np.log(2.0), 1e9])
        c = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        rgb, opacity, depth, w = composite(sigma, c, mu)
        assert np.allclose(w, [0.5, 0.5], atol=1e-12)
        assert np.isclose(opacity, 1.0)
        assert np.allclose(rgb, [0.5, 0.5, 0.0], atol=1e-12)
        assert np.isclose(depth, 1.0)

    def test_non_increasing_mu_rejected(self):
        with pytest.raises(ValueError):
            composite(
                np.ones(3), np.ones((3, 3)), np.array([1.0, 1.0, 2.0])
            )

    def test_weights_sum_to_opacity(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 30))
            sigma = rng.uniform(0, 50, size=n)
            mu = np.sort(rng.uniform(0.1, 3.0, size=n))
            while np.any(np.diff(mu) <= 0):
                mu = np.sort(rng.uniform(0.1, 3.0, size=n))
            rgb, opacity, depth, w = composite(sigma, rng.uniform(size=(n, 3)), mu)
            assert np.all(w >= 0.0) and np.all(w <= 1.0)
            assert np.isclose(w.sum(), opacity, atol=1e-9)

    def test_opacity_monotone_in_density(self, rng):
        for _ in range(30):
            n = 16
            sigma = rng.uniform(0, 5, size=n)
            mu = np.linspace(0.5, 2.0, n)
            c = rng.uniform(size=(n, 3))
            _, op1, _, _ = composite(sigma, c, mu)
            _, op2, _, _ = composite(sigma + rng.uniform(0.1, 1.0), c, mu)
            assert op2 >= op1 - 1e-12


class TestRenderView:
    def test_empty_scene_is_background(self):
        params = make_params(seed=0)
        params.sdf_weights[3][:] = 0.0
        params.sdf_biases[3][:] = 100.0  # f >> 0 everywhere
        bg = np.array([0.2, 0.5, 0.9])
        samp = SamplingConfig(near=1.0, far=3.0, samples_per_ray=16)
        out = render_view(params, DP, front_cam(), INTR, (8, 8), bg, samp, seed=0)
        assert np.allclose(out.rgb, bg[None, None, :], atol=1e-250)
        assert np.all(out.opacity < 1e-250)

    def test_deterministic_for_seed(self):
        params = make_params(seed=1)
        samp = SamplingConfig(near=1.0, far=3.0, samples_per_ray=8)
        a = render_view(params, DP, front_cam(), INTR, (8, 8), None, samp, seed=5)
        b = render_view(params, DP, front_cam(), INTR, (8, 8), None, samp, seed=5)
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.depth, b.depth)

    def test_analytic_sphere_center_pixel(self):
        samp = SamplingConfig(near=1.0, far=3.0, samples_per_ray=128, stratified=False)
        out = render_view_callable(
            sphere_sdf(np.zeros(3), 0.3), None, DP, front_cam(), INTR,
            (32, 32), samp, seed=0,
        )
        assert out.opacity[15, 15] > 0.99
        assert out.opacity[0, 0] < 0.01

    def test_invalid_resolution(self):
        params = make_params(seed=2)
        samp = SamplingConfig(near=1.0, far=3.0, samples_per_ray=8)
        with pytest.raises(ValueError):
            render_view(params, DP, front_cam(), INTR, (0, 8), None, samp)


class TestRenderSensor:
    def setup_method(self):
        self.samp = SamplingConfig(
            near=1.0, far=3.0, samples_per_ray=128, stratified=False
        )
        self.sdf = sphere_sdf(np.zeros(3), 0.3)

    def test_center_ray_depth(self):
        out = render_rays_callable(
            self.sdf, None, DP,
            np.array([[0.0, 0.0, -2.0]]), np.array([[0.0, 0.0, 1.0]]),
            self.samp, seed=0,
        )
        tol = 2.0 * (3.0 - 1.0) / 128
        assert out.opacity[0] > 0.99
        assert abs(out.depth[0] - 1.7) < tol

    def test_missing_ray(self):
        # passes 0.4 units from the center: misses the r=0.3 sphere by
        # 0.1 > 10 * beta
        out = render_rays_callable(
            self.sdf, None, DP,
            np.array([[0.4, 0.0, -2.0]]), np.array([[0.0, 0.0, 1.0]]),
            self.samp, seed=0,
        )
        assert out.opacity[0] < 0.01

    def test_params_and_callable_agree(self):
        params = make_params(seed=3)
        origins = np.tile([[0.1, -0.2, -2.0]], (6, 1))
        dirs = np.tile([[0.0, 0.0, 1.0]], (6, 1))
        (op, dep), _ = render_sensor_with_cache(
            params, DP, origins, dirs, self.samp, seed=9
        )
        out = render_rays_callable(
            lambda p: sdf_forward(params, p)[0], None, DP, origins, dirs,
            self.samp, seed=9,
        )
        assert np.allclose(op, out.opacity, atol=1e-12)
        assert np.allclose(dep, out.depth, atol=1e-12)


class TestRenderGradients:
    def test_full_chain_matches_fd(self, rng):
        params = make_params(seed=4)
        dp = DensityParams(alpha=5.0, beta=0.3)
        samp = SamplingConfig(near=0.5, far=2.5, samples_per_ray=8, stratified=False)
        intr = CameraIntrinsics(fx=8.0, fy=8.0, cx=1.5, cy=1.5, width=4, height=4)
        bg = np.array([0.3, 0.6, 0.9])
        target = rng.uniform(size=(4, 4, 3))

        out, cache = render_view_with_cache(
            params, dp, front_cam(), intr, (4, 4), bg, samp, seed=11
        )
        grads = render_backward(cache, d_rgb=(out.rgb - target).reshape(-1, 3))

        def loss(p):
            o = render_view(p, dp, front_cam(), intr, (4, 4), bg, samp, seed=11)
            return 0.5 * float(np.sum((o.rgb - target) ** 2))

        assert fd_check(loss, params, grads, rng, n_coords=60) < 1e-3

    def test_opacity_depth_chain_matches_fd(self, rng):
        params = make_params(seed=5)
        dp = DensityParams(alpha=5.0, beta=0.3)
        samp = SamplingConfig(near=0.5, far=2.5, samples_per_ray=8, stratified=False)
        origins = np.tile([[0.0, 0.0, -2.0]], (5, 1)) + rng.normal(
            scale=0.1, size=(5, 3)
        )
        dirs = np.tile([[0.0, 0.0, 1.0]], (5, 1))

        (op, dep), cache = render_sensor_with_cache(
            params, dp, origins, dirs, samp, seed=4
        )
        grads = render_backward(cache, d_opacity=2 * op, d_depth=2 * dep)

        def loss(p):
            (o, d), _ = render_sensor_with_cache(p, dp, origins, dirs, samp, seed=4)
            return float(np.sum(o**2) + np.sum(d**2))

        assert fd_check(loss, params, grads, rng, n_coords=60) < 1e-3


class TestRigidInvariance:
    def test_analytic_render_invariant_under_rigid_motion(self):
        samp = SamplingConfig(near=1.0, far=3.0, samples_per_ray=64, stratified=False)
        center = np.array([0.05, -0.1, 0.02])
        cam = look_at([0.3, -1.8, 0.6], target=center)
        out1 = render_view_callable(
            sphere_sdf(center, 0.3), None, DP, cam, INTR, (16, 16), samp, seed=0
        )
        rot = rodrigues_rotation(
            np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8]), 63.0
        )
        shift = np.array([0.4, 0.2, -0.7])
        center2 = rot.apply(center) + shift
        cam2 = CameraPose(
            rotation=rot.compose(cam.rotation),
            translation=rot.apply(cam.translation) + shift,
        )
        out2 = render_view_callable(
            sphere_sdf(center2, 0.3), None, DP, cam2, INTR, (16, 16), samp, seed=0
        )
        assert np.allclose(out1.opacity, out2.opacity, atol=1e-6)
        assert np.allclose(out1.depth, out2.depth, atol=1e-6)


class TestImageDump(object):
    def test_png_roundtrip(self, tmp_path, rng):
        from PIL import Image

        rgb = rng.uniform(size=(8, 8, 3))
        p = tmp_path / "img.png"
        renderer.save_image_png(p, rgb)
        back = np.asarray(Image.open(p))
        assert back.shape == (8, 8, 3)
        assert np.abs(back / 255.0 - rgb).max() < 1.0 / 255.0

    def test_depth_png_millimeters(self, tmp_path):
        from PIL import Image

        depth = np.array([[1.2345, 0.0], [2.0, 65.0]])
        p = tmp_path / "depth.png"
        renderer.save_depth_png(p, depth)
        back = np.asarray(Image.open(p))
        assert back.dtype == np.uint16 or back.dtype == np.int32
        assert back[0, 0] in (1234, 1235)
        assert back[1, 1] == 65000
