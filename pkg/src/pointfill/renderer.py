"""Differentiable volume rendering of the SDF-defined radiance field.

Rays are sampled on a uniform (optionally stratified) distance grid, field
densities and colors are alpha-composited front to back, and every output
(per-pixel color, opacity, expected depth) carries an exact reverse-mode
path back to the field parameters.

Per segment ``i``: ``alpha_i = 1 - exp(-sigma_i * (mu_{i+1} - mu_i))`` and
``w_i = alpha_i * prod_{j<i}(1 - alpha_j)``. The final segment reuses the
previous segment's length. Expected depth is weight-normalized,
``sum(w mu) / max(sum w, 1e-8)``, so empty rays stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fields as _fields
from .fields import DensityParams, FieldGrads, FieldParams
from .geometry import CameraIntrinsics, CameraPose

_DEPTH_FLOOR = 1e-8


@dataclass(frozen=True)
class SamplingConfig:
    """Ray sampling band and sample count."""

    near: float
    far: float
    samples_per_ray: int = 128
    stratified: bool = True

    def __post_init__(self):
        if not 0 <= self.near < self.far:
            raise ValueError("need 0 <= near < far")
        if self.samples_per_ray < 2:
            raise ValueError("need at least 2 samples per ray")


@dataclass
class RenderOutput:
    """Per-pixel render results; ``weights`` has one entry per sample."""

    rgb: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray
    weights: np.ndarray


def sample_distances(cfg: SamplingConfig, seed=None) -> np.ndarray:
    """Distances for one ray: midpoints of equal-width bins, or one uniform
    draw per bin when stratified. Strictly increasing, inside [near, far]."""
    rng = np.random.default_rng(seed)
    return _sample_distances_batch(cfg, rng, 1)[0]


def _sample_distances_batch(
    cfg: SamplingConfig, rng: np.random.Generator, n_rays: int
) -> np.ndarray:
    n = cfg.samples_per_ray
    edges = np.linspace(cfg.near, cfg.far, n + 1)
    lo, width = edges[:-1], (cfg.far - cfg.near) / n
    if cfg.stratified:
        u = rng.uniform(size=(n_rays, n))
    else:
        u = np.full((n_rays, n), 0.5)
    return lo[None, :] + u * width


def composite(sigma, color, mu) -> tuple:
    """Alpha-composite one ray. Returns (rgb, opacity, depth, weights).

    ``sigma`` and ``mu`` are (N,), ``color`` is (N, 3); ``mu`` must be
    strictly increasing with N >= 2.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if sigma.ndim != 1 or sigma.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if mu.shape != sigma.shape or color.shape != (sigma.shape[0], 3):
        raise ValueError("sigma, color, mu lengths disagree")
    if np.any(np.diff(mu) <= 0):
        raise ValueError("sample distances must be strictly increasing")
    w, trans, alpha = _composite_weights(sigma[None, :], mu[None, :])
    opacity = w.sum(axis=1)
    depth = (w * mu[None, :]).sum(axis=1) / np.maximum(opacity, _DEPTH_FLOOR)
    rgb = (w[:, :, None] * color[None, :, :]).sum(axis=1)
    return rgb[0], float(opacity[0]), float(depth[0]), w[0]


def _segment_lengths(mu: np.ndarray) -> np.ndarray:
    delta = np.diff(mu, axis=1)
    return np.concatenate([delta, delta[:, -1:]], axis=1)


def _composite_weights(sigma: np.ndarray, mu: np.ndarray):
    """Batched weights: sigma, mu are (R, N). Returns (w, trans, alpha)
    where trans is the exclusive transmittance."""
    s = sigma * _segment_lengths(mu)
    alpha = -np.expm1(-s)
    one_minus = 1.0 - alpha
    trans = np.cumprod(
        np.concatenate(
            [np.ones((sigma.shape[0], 1)), one_minus[:, :-1]], axis=1
        ),
        axis=1,
    )
    return alpha * trans, trans, alpha


# Compositing weights below this are invisible in the rendered image and
# carry no usable gradient; samples under it skip the color net entirely.
_COLOR_W_CUTOFF = 1e-12
# Relative cutoff on per-sample SDF gradients: the Laplace density slope
# decays like exp(-|f|/beta), so all but a thin shell of samples around the
# surface contribute nothing to the parameter gradient.
_DF_RELATIVE_CUTOFF = 1e-16


@dataclass
class RenderCache:
    """Everything needed to backpropagate a render to field parameters."""

    dp: DensityParams
    mu: np.ndarray  # (R, N)
    f: np.ndarray  # (R, N)
    w: np.ndarray
    trans: np.ndarray
    alpha: np.ndarray
    opacity: np.ndarray  # (R,)
    depth: np.ndarray  # (R,)
    sdf_cache: object
    color_sel: np.ndarray | None  # flat sample indices that got color
    color_vals: np.ndarray | None  # (S, 3) colors at selected samples
    color_cache: object | None
    bg: np.ndarray | None


def _render_rays(
    params: FieldParams,
    dp: DensityParams,
    origins: np.ndarray,
    dirs: np.ndarray,
    sampling: SamplingConfig,
    rng: np.random.Generator,
    with_color: bool,
    bg: np.ndarray | None,
) -> tuple[RenderOutput, RenderCache]:
    n_rays = origins.shape[0]
    mu = _sample_distances_batch(sampling, rng, n_rays)
    pts = origins[:, None, :] + mu[:, :, None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)
    feat = _fields._encode(flat, params.encoding)
    f_flat, sdf_cache = _fields.sdf_forward(params, flat, feat=feat)
    n = mu.shape[1]
    f = f_flat.reshape(n_rays, n)
    sigma = _fields.density_from_sdf(f, dp)
    w, trans, alpha = _composite_weights(sigma, mu)
    opacity = w.sum(axis=1)
    depth = (w * mu).sum(axis=1) / np.maximum(opacity, _DEPTH_FLOOR)

    color_sel = None
    color_vals = None
    color_cache = None
    if with_color:
        rgb = np.zeros((n_rays, 3))
        color_sel = np.flatnonzero(w.reshape(-1) > _COLOR_W_CUTOFF)
        if color_sel.size:
            color_vals, color_cache = _fields.color_forward(
                params, flat[color_sel], feat=feat[color_sel]
            )
            ray_idx = color_sel // n
            wc = w.reshape(-1)[color_sel]
            for ch in range(3):
                rgb[:, ch] = np.bincount(
                    ray_idx,
                    weights=wc * color_vals[:, ch],
                    minlength=n_rays,
                )
        if bg is not None:
            rgb = rgb + (1.0 - opacity)[:, None] * bg[None, :]
    else:
        rgb = np.zeros((n_rays, 3))

    out = RenderOutput(rgb=rgb, opacity=opacity, depth=depth, weights=w)
    cache = RenderCache(
        dp=dp,
        mu=mu,
        f=f,
        w=w,
        trans=trans,
        alpha=alpha,
        opacity=opacity,
        depth=depth,
        sdf_cache=sdf_cache,
        color_sel=color_sel,
        color_vals=color_vals,
        color_cache=color_cache,
        bg=bg,
    )
    return out, cache


def render_backward(
    cache: RenderCache,
    d_rgb: np.ndarray | None = None,
    d_opacity: np.ndarray | None = None,
    d_depth: np.ndarray | None = None,
) -> FieldGrads:
    """Backpropagate gradients on render outputs to field parameters.

    ``d_rgb`` is (R, 3); ``d_opacity`` and ``d_depth`` are (R,). Any subset
    may be given; missing ones are treated as zero.
    """
    r, n = cache.mu.shape
    a = np.zeros((r, n))  # dL/dw per sample
    d_color_sel = None

    d_op_total = (
        np.array(d_opacity, dtype=np.float64, copy=True)
        if d_opacity is not None
        else np.zeros(r)
    )
    if d_rgb is not None:
        if cache.color_sel is None:
            raise ValueError("render was computed without color")
        d_rgb = np.asarray(d_rgb, dtype=np.float64)
        if cache.bg is not None:
            # rgb_final = rgb_fg + (1 - opacity) * bg
            d_op_total -= d_rgb @ cache.bg
        if cache.color_sel.size:
            ray_idx = cache.color_sel // n
            a.reshape(-1)[cache.color_sel] += np.einsum(
                "sc,sc->s", d_rgb[ray_idx], cache.color_vals
            )
            d_color_sel = (
                cache.w.reshape(-1)[cache.color_sel, None] * d_rgb[ray_idx]
            )
    a += d_op_total[:, None]
    if d_depth is not None:
        d_depth = np.asarray(d_depth, dtype=np.float64)
        s0 = np.maximum(cache.opacity, _DEPTH_FLOOR)
        live = (cache.opacity > _DEPTH_FLOOR).astype(np.float64)
        a += d_depth[:, None] * (
            cache.mu / s0[:, None]
            - (live * cache.depth / s0)[:, None]
        )

    # dL/d(sigma_k Delta_k) = A_k * T_{k+1} - sum_{i>k} A_i w_i
    t_inc = cache.trans * (1.0 - cache.alpha)
    aw = a * cache.w
    suffix = np.cumsum(aw[:, ::-1], axis=1)[:, ::-1]
    suffix_after = np.concatenate(
        [suffix[:, 1:], np.zeros((r, 1))], axis=1
    )
    ds = a * t_inc - suffix_after
    d_sigma = ds * _segment_lengths(cache.mu)
    df = (
        d_sigma * _fields.density_slope_wrt_sdf(cache.f, cache.dp)
    ).reshape(-1)

    grads = _sparse_sdf_backward(cache.sdf_cache, df)
    if d_color_sel is not None and d_color_sel.size:
        cgrads, _ = _fields.mlp_backward(cache.color_cache, d_color_sel)
        grads.add_scaled(cgrads)
    return grads


def _sparse_sdf_backward(sdf_cache, df: np.ndarray) -> FieldGrads:
    """SDF backward restricted to samples whose gradient is non-negligible
    relative to the largest one."""
    peak = float(np.abs(df).max()) if df.size else 0.0
    if peak == 0.0:
        return FieldGrads.zeros_like(sdf_cache.params)
    sel = np.flatnonzero(np.abs(df) > _DF_RELATIVE_CUTOFF * peak)
    if sel.size == df.size:
        grads, _ = _fields.mlp_backward(sdf_cache, df)
        return grads
    sub_cache = _fields.SDFCache(
        params=sdf_cache.params,
        x=sdf_cache.x[sel],
        feat=sdf_cache.feat[sel],
        hs=[h[sel] for h in sdf_cache.hs],
        f=sdf_cache.f[sel],
    )
    grads, _ = _fields.mlp_backward(sub_cache, df[sel])
    return grads


def _pixel_rays(
    intr: CameraIntrinsics, pose: CameraPose, height: int, width: int
):
    """World-frame rays through every pixel center of an image grid."""
    scaled = intr.scaled_to(width=width, height=height)
    u, v = np.meshgrid(
        np.arange(width, dtype=np.float64),
        np.arange(height, dtype=np.float64),
    )
    d_cam = np.stack(
        [
            (u - scaled.cx) / scaled.fx,
            (v - scaled.cy) / scaled.fy,
            np.ones_like(u),
        ],
        axis=-1,
    ).reshape(-1, 3)
    d_world = d_cam @ pose.rotation.matrix.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.translation, d_world.shape).copy()
    return origins, d_world


def render_view(
    params: FieldParams,
    dp: DensityParams,
    camera: CameraPose,
    intrinsics: CameraIntrinsics,
    resolution: tuple,
    bg_color,
    sampling: SamplingConfig,
    seed=None,
) -> RenderOutput:
    """Render an image of ``resolution = (height, width)`` pixels.

    The intrinsics are rescaled to the requested resolution. ``bg_color``
    (an RGB triple, or None for no background) is composited behind the
    field with weight ``1 - opacity``. Deterministic for a fixed seed.
    """
    out, _ = render_view_with_cache(
        params, dp, camera, intrinsics, resolution, bg_color, sampling, seed
    )
    return out


def render_view_with_cache(
    params: FieldParams,
    dp: DensityParams,
    camera: CameraPose,
    intrinsics: CameraIntrinsics,
    resolution: tuple,
    bg_color,
    sampling: SamplingConfig,
    seed=None,
) -> tuple[RenderOutput, RenderCache]:
    """render_view plus the cache needed by render_backward."""
    height, width = int(resolution[0]), int(resolution[1])
    if height < 1 or width < 1:
        raise ValueError("resolution must be at least 1x1")
    bg = None
    if bg_color is not None:
        bg = np.asarray(bg_color, dtype=np.float64)
        if bg.shape != (3,):
            raise ValueError("bg_color must be an RGB triple")
    origins, dirs = _pixel_rays(intrinsics, camera, height, width)
    rng = np.random.default_rng(seed)
    out, cache = _render_rays(
        params, dp, origins, dirs, sampling, rng, with_color=True, bg=bg
    )
    n = sampling.samples_per_ray
    out = RenderOutput(
        rgb=out.rgb.reshape(height, width, 3),
        opacity=out.opacity.reshape(height, width),
        depth=out.depth.reshape(height, width),
        weights=out.weights.reshape(height, width, n),
    )
    return out, cache


def render_sensor(
    params: FieldParams,
    dp: DensityParams,
    origins,
    dirs,
    sampling: SamplingConfig,
    seed=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Opacity and expected depth along the given sensor rays (no color)."""
    out, _ = render_sensor_with_cache(
        params, dp, origins, dirs, sampling, seed
    )
    return out


def render_sensor_with_cache(
    params: FieldParams,
    dp: DensityParams,
    origins,
    dirs,
    sampling: SamplingConfig,
    seed=None,
):
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if origins.shape != dirs.shape or origins.shape[1] != 3:
        raise ValueError("origins and dirs must both be (K, 3)")
    if origins.shape[0] == 0:
        raise ValueError("need at least one ray")
    rng = np.random.default_rng(seed)
    out, cache = _render_rays(
        params, dp, origins, dirs, sampling, rng, with_color=False, bg=None
    )
    return (out.opacity, out.depth), cache


def render_rays_callable(
    sdf_fn,
    color_fn,
    dp: DensityParams,
    origins,
    dirs,
    sampling: SamplingConfig,
    seed=None,
    bg_color=None,
) -> RenderOutput:
    """Forward-only rendering of arbitrary callables; used for analytic
    oracles and for producing reference views. ``sdf_fn`` maps (B, 3) to
    (B,); ``color_fn`` maps (B, 3) to (B, 3) or is None for mid-gray."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    rng = np.random.default_rng(seed)
    n_rays = origins.shape[0]
    mu = _sample_distances_batch(sampling, rng, n_rays)
    pts = (origins[:, None, :] + mu[:, :, None] * dirs[:, None, :]).reshape(
        -1, 3
    )
    f = np.asarray(sdf_fn(pts), dtype=np.float64).reshape(n_rays, -1)
    sigma = _fields.density_from_sdf(f, dp)
    w, _, _ = _composite_weights(sigma, mu)
    opacity = w.sum(axis=1)
    depth = (w * mu).sum(axis=1) / np.maximum(opacity, _DEPTH_FLOOR)
    if color_fn is None:
        color = np.full((n_rays, mu.shape[1], 3), 0.5)
    else:
        color = np.asarray(color_fn(pts), dtype=np.float64).reshape(
            n_rays, -1, 3
        )
    rgb = (w[:, :, None] * color).sum(axis=1)
    if bg_color is not None:
        bg = np.asarray(bg_color, dtype=np.float64)
        rgb = rgb + (1.0 - opacity)[:, None] * bg[None, :]
    return RenderOutput(rgb=rgb, opacity=opacity, depth=depth, weights=w)


def render_view_callable(
    sdf_fn,
    color_fn,
    dp: DensityParams,
    camera: CameraPose,
    intrinsics: CameraIntrinsics,
    resolution: tuple,
    sampling: SamplingConfig,
    seed=None,
    bg_color=None,
) -> RenderOutput:
    """Image-shaped variant of render_rays_callable."""
    height, width = int(resolution[0]), int(resolution[1])
    origins, dirs = _pixel_rays(intrinsics, camera, height, width)
    out = render_rays_callable(
        sdf_fn, color_fn, dp, origins, dirs, sampling, seed, bg_color
    )
    n = sampling.samples_per_ray
    return RenderOutput(
        rgb=out.rgb.reshape(height, width, 3),
        opacity=out.opacity.reshape(height, width),
        depth=out.depth.reshape(height, width),
        weights=out.weights.reshape(height, width, n),
    )


def save_image_png(path, rgb: np.ndarray) -> None:
    """Write an RGB float image in [0, 1] as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def save_depth_png(path, depth: np.ndarray) -> None:
    """Write a depth map (scene units, meters) as 16-bit PNG millimeters."""
    from PIL import Image

    mm = np.clip(np.asarray(depth) * 1000.0 + 0.5, 0, 65535).astype(
        np.uint16
    )
    Image.fromarray(mm).save(path)
