"""The optimization loop: Adam over the field parameters, the camera
curriculum that widens azimuth/elevation sampling as training progresses,
view-dependent prompt augmentation, loss orchestration, checkpoints, and
final surface extraction.

Every iteration (i) renders a batch of sensor rays and applies the mask and
depth terms, (ii) applies the point, eikonal and plane terms on the input
points plus fresh uniform samples, (iii) renders a curriculum camera view
over a random background and injects the score-distillation gradient, and
(iv) takes one Adam step on the combined, norm-clipped gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evalx as _evalx
from . import fields as _fields
from . import guidance as _guidance
from . import losses as _losses
from . import renderer as _renderer
from .errors import GuidanceUnavailableError
from .fields import DensityParams, EncodingConfig, FieldGrads, FieldParams
from .geometry import CameraPose, camera_update, elevation_of
from .ingest import SensorObservation
from .losses import Box, LossWeights
from .renderer import SamplingConfig

# Azimuth half-range schedule: epoch threshold -> half-range in degrees.
CURRICULUM_BREAKPOINTS = ((20, 30.0), (50, 45.0), (80, 60.0), (100, 90.0), (120, 180.0))
ELEVATION_START_EPOCH = 20

VIEW_SUFFIXES = (
    "front view",
    "side view",
    "back view",
    "overhead view",
    "bottom view",
)


@dataclass
class TrainConfig:
    prompt: str = ""
    dataset_kind: str = "depth-camera"  # or "lidar"
    epochs: int = 2000
    iterations_per_epoch: int = 100
    learning_rate: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    render_resolution: tuple = (80, 80)
    pixel_batch: int = 2000
    aux_samples: int = 1000
    samples_per_ray: int = 128
    stratified: bool = True
    near: float | None = None  # None: camera distance - render_margin
    far: float | None = None
    render_margin: float = 1.0
    sphere_radius: float | None = None  # None: 0.5 depth-camera, 0.9 lidar
    hidden: int = 96
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    density: DensityParams = field(default_factory=DensityParams)
    gamma0_azimuth: float = 0.0
    seed: int = 0
    grad_clip: float = 10.0
    checkpoint_interval_epochs: int = 100
    guidance_scale: float = 100.0
    schedule_T: int = _guidance.DEFAULT_T
    schedule_beta_start: float = _guidance.DEFAULT_BETA_START
    schedule_beta_end: float = _guidance.DEFAULT_BETA_END
    timestep_lo_frac: float = 0.02
    timestep_hi_frac: float = 0.98
    region_half_extent: float = 0.7
    mesh_resolution: int = 64
    point_batch: int | None = None  # None: all input points every iteration
    guidance_error_policy: str = "fail"  # or "continue"

    def __post_init__(self):
        if self.dataset_kind not in ("depth-camera", "lidar"):
            raise ValueError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.guidance_error_policy not in ("fail", "continue"):
            raise ValueError("guidance_error_policy must be fail|continue")
        for name in ("epochs", "iterations_per_epoch", "pixel_batch",
                     "samples_per_ray", "mesh_resolution", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def init_radius(self) -> float:
        if self.sphere_radius is not None:
            return self.sphere_radius
        return 0.5 if self.dataset_kind == "depth-camera" else 0.9


@dataclass(frozen=True)
class CurriculumState:
    """Where the camera-sampling schedule stands at a given epoch."""

    epoch: int
    nu: float  # azimuth half-range, degrees
    elevation_enabled: bool
    xi0: float  # sensor elevation above the ground plane, degrees

    @classmethod
    def for_epoch(cls, epoch: int, xi0: float) -> "CurriculumState":
        nu = 0.0
        for threshold, value in CURRICULUM_BREAKPOINTS:
            if epoch >= threshold:
                nu = value
        return cls(
            epoch=epoch,
            nu=nu,
            elevation_enabled=epoch >= ELEVATION_START_EPOCH,
            xi0=xi0,
        )


def curriculum_sample(
    state: CurriculumState, kind: str, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Draw (azimuth offset, elevation offset, distance scale) for one view.

    Azimuth is uniform in [-nu, nu]. Elevation is 0 until the schedule
    enables it, then uniform in [-xi0, 0] for depth-camera data (the camera
    sweeps down toward the plane, never below it) or [-xi0, xi0] for LiDAR.
    Distance scale is 1 except for LiDAR after enabling, where it is
    uniform in [1, 2]. Exactly three draws are consumed regardless of the
    branch, so streams stay aligned across epochs.
    """
    u_az, u_el, u_d = rng.uniform(size=3)
    gamma_az = -state.nu + 2.0 * state.nu * u_az
    if not state.elevation_enabled:
        gamma_el = 0.0
    elif kind == "lidar":
        gamma_el = -state.xi0 + 2.0 * state.xi0 * u_el
    else:
        gamma_el = -state.xi0 * u_el
    if kind == "lidar" and state.elevation_enabled:
        dist = 1.0 + u_d
    else:
        dist = 1.0
    return float(gamma_az), float(gamma_el), float(dist)


def wrap_angle(theta: float) -> float:
    """Wrap degrees into (-180, 180]."""
    m = theta % 360.0
    return m - 360.0 if m > 180.0 else m


def view_suffix(
    gamma0_azimuth: float, gamma_azimuth: float, elevation: float
) -> str:
    """Directional suffix for a view. ``elevation`` is the view's elevation
    above the ground plane in degrees; azimuth bins are front (|az| <= 45),
    side (45 < |az| <= 135) and back, after offsetting by the user-supplied
    orientation of the scan."""
    theta = wrap_angle(gamma0_azimuth + gamma_azimuth)
    if elevation >= 60.0:
        return "overhead view"
    if elevation <= -15.0:
        return "bottom view"
    if abs(theta) <= 45.0:
        return "front view"
    if abs(theta) <= 135.0:
        return "side view"
    return "back view"


def view_text(
    base_prompt: str,
    gamma0_azimuth: float,
    gamma_azimuth: float,
    elevation: float,
) -> str:
    """Append the directional suffix to the base prompt."""
    sfx = view_suffix(gamma0_azimuth, gamma_azimuth, elevation)
    return f"{base_prompt}, {sfx}"


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one pair per parameter array."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: FieldParams) -> "AdamState":
        arrays = params.arrays()
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


def adam_step(
    params: FieldParams,
    grads: FieldGrads,
    state: AdamState,
    lr: float,
) -> tuple[FieldParams, AdamState]:
    """One in-place Adam update. Raises ValueError on shape mismatch."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(state.m):
        raise ValueError("optimizer state does not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.shape}"
            )
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainResult:
    params: FieldParams
    mesh: _evalx.TriangleMesh
    history: list
    checkpoint_paths: list
    mesh_path: str | None
    loss_log_path: str | None


def _sampling_for_distance(config: TrainConfig, dist: float) -> SamplingConfig:
    near = config.near
    far = config.far
    if near is None or far is None:
        near = max(dist - config.render_margin, 0.0)
        far = dist + config.render_margin
    return SamplingConfig(
        near=near,
        far=far,
        samples_per_ray=config.samples_per_ray,
        stratified=config.stratified,
    )


def _lidar_view_rays(
    obs: SensorObservation, rotation, dist_scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Novel LiDAR view: rotate the crop's ray bundle about the origin and
    pull the shared origin outward by the distance scale, re-aiming each
    ray at its original anchor point so the bundle stays on the object."""
    r = rotation.matrix
    origin = obs.ray_origins[0]
    anchor_dist = max(float(np.linalg.norm(origin)), 1e-6)
    anchors = obs.ray_origins + anchor_dist * obs.ray_dirs
    new_origin = (r @ origin) * dist_scale
    new_anchors = anchors @ r.T
    dirs = new_anchors - new_origin
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(new_origin, dirs.shape).copy()
    return origins, dirs


def train(
    config: TrainConfig,
    obs: SensorObservation,
    provider=None,
    out_dir=None,
    callback=None,
) -> TrainResult:
    """Optimize the fields against a preprocessed observation.

    ``provider`` is a guidance provider or None (sensor losses only).
    ``out_dir``, when given, receives checkpoints, the per-iteration CSV
    loss log, and the extracted mesh. ``callback(iteration, epoch, params,
    breakdown)`` runs after every Adam step. Identical configs and seeds
    give bitwise-identical results.
    """
    if obs.plane is None:
        raise ValueError("observation needs a ground plane; run ingest first")
    kind = config.dataset_kind
    rng = np.random.default_rng(config.seed)
    dp = config.density
    weights = config.weights

    params = _fields.sphere_init(
        config.encoding, config.init_radius, seed=config.seed,
        hidden=config.hidden,
    )
    adam = AdamState.init(params)
    xi0 = elevation_of(obs.pose, obs.plane)
    region = Box.cube(config.region_half_extent)
    schedule = _guidance.make_schedule(
        config.schedule_T, config.schedule_beta_start, config.schedule_beta_end
    )
    sensor_dist = float(np.linalg.norm(obs.pose.translation))
    sensor_sampling = _sampling_for_distance(config, sensor_dist)

    mask = obs.mask.astype(np.float64)
    k_rays = obs.n_rays
    use_all_rays = kind == "lidar" or config.pixel_batch >= k_rays

    out_path = Path(out_dir) if out_dir is not None else None
    log_writer = None
    checkpoint_paths = []
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_writer = _losses.LossLogWriter(out_path / "losses.csv")

    history = []
    iteration = 0
    try:
        for epoch in range(config.epochs):
            state = CurriculumState.for_epoch(epoch, xi0)
            for _ in range(config.iterations_per_epoch):
                # (i) sensor compatibility on a ray batch
                if use_all_rays:
                    batch = np.arange(k_rays)
                else:
                    batch = rng.choice(
                        k_rays, size=config.pixel_batch, replace=False
                    )
                (op, dep), cache = _renderer.render_sensor_with_cache(
                    params, dp, obs.ray_origins[batch], obs.ray_dirs[batch],
                    sensor_sampling, seed=rng,
                )
                l_mask = _losses.mask_loss(mask[batch], op)
                l_depth = _losses.depth_loss(obs.depth[batch], dep, mask[batch])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    d_dep = _losses.depth_loss_ddepth(
                        obs.depth[batch], dep, mask[batch]
                    )
                grads = _renderer.render_backward(
                    cache,
                    d_opacity=weights.mask
                    * _losses.mask_loss_dopacity(mask[batch], op),
                    d_depth=weights.depth * d_dep,
                )
                del cache

                # (ii) point, eikonal, plane terms
                if config.point_batch is not None and config.point_batch < len(obs.points):
                    pts_idx = rng.choice(
                        len(obs.points), size=config.point_batch, replace=False
                    )
                    p_batch = obs.points[pts_idx]
                else:
                    p_batch = obs.points
                l_point, g_point = _losses.point_loss_grad(params, p_batch)
                grads.add_scaled(g_point, weights.point)

                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    below, eik_uniform = _losses.sample_aux_points(
                        obs.plane, region, config.aux_samples, seed=rng
                    )
                eik_pts = np.concatenate([p_batch, eik_uniform], axis=0)
                l_eik, g_eik = _losses.eikonal_loss_grad(params, eik_pts)
                grads.add_scaled(g_eik, weights.eikonal)
                l_plane, g_plane = _losses.plane_loss_grad(params, below)
                grads.add_scaled(g_plane, weights.plane)

                # (iii) score distillation on a curriculum view
                if provider is not None:
                    gamma_az, gamma_el, dist_scale = curriculum_sample(
                        state, kind, rng
                    )
                    cam = camera_update(obs.pose, obs.plane, gamma_az, gamma_el)
                    bg = rng.uniform(size=3)
                    rng_iter = np.random.default_rng(
                        [config.seed, iteration]
                    )
                    t = _guidance.sample_timestep(
                        schedule, rng_iter,
                        config.timestep_lo_frac, config.timestep_hi_frac,
                    )
                    if kind == "lidar":
                        origins, dirs = _lidar_view_rays(
                            obs, cam.rotation.compose(
                                obs.pose.rotation.inverse()
                            ), dist_scale,
                        )
                        view_sampling = _sampling_for_distance(
                            config,
                            float(np.linalg.norm(origins[0])),
                        )
                        out, rcache = _renderer._render_rays(
                            params, dp, origins, dirs, view_sampling, rng,
                            with_color=True, bg=bg,
                        )
                        img = out.rgb.reshape(64, -1, 3)
                    else:
                        cam = CameraPose(
                            rotation=cam.rotation,
                            translation=cam.translation * dist_scale,
                        )
                        view_sampling = _sampling_for_distance(
                            config, sensor_dist * dist_scale
                        )
                        view, rcache = _renderer.render_view_with_cache(
                            params, dp, cam, obs.intrinsics,
                            config.render_resolution, bg, view_sampling,
                            seed=rng,
                        )
                        img = view.rgb
                    elevation = xi0 + gamma_el
                    sfx = view_suffix(
                        config.gamma0_azimuth, gamma_az, elevation
                    )
                    request = _guidance.GuidanceRequest(
                        image=img,
                        prompt=config.prompt,
                        view_suffix=sfx,
                        t=t,
                        epsilon=rng_iter.standard_normal(img.shape),
                        guidance_scale=config.guidance_scale,
                        azimuth_deg=wrap_angle(
                            config.gamma0_azimuth + gamma_az
                        ),
                        elevation_deg=elevation,
                        bg_color=bg,
                    )
                    try:
                        sds = _guidance.sds_gradient(
                            request, provider, schedule
                        )
                    except GuidanceUnavailableError:
                        if config.guidance_error_policy == "fail":
                            raise
                        warnings.warn(
                            "guidance unavailable; iteration "
                            f"{iteration} ran with sensor losses only",
                            RuntimeWarning,
                        )
                        sds = None
                    if sds is not None:
                        grads.add_scaled(
                            _renderer.render_backward(
                                rcache, d_rgb=sds.grad.reshape(-1, 3)
                            )
                        )
                    del rcache

                # (iv) one optimizer step on the combined gradient
                grads.clip_global_norm(config.grad_clip)
                adam_step(params, grads, adam, config.learning_rate)

                breakdown = _losses.total_loss(
                    l_point, l_mask, l_depth, l_eik, l_plane, weights
                )
                history.append((iteration, epoch, breakdown))
                if log_writer is not None:
                    log_writer.write(iteration, epoch, breakdown)
                if callback is not None:
                    callback(iteration, epoch, params, breakdown)
                iteration += 1

            if (
                out_path is not None
                and config.checkpoint_interval_epochs > 0
                and (epoch + 1) % config.checkpoint_interval_epochs == 0
            ):
                path = out_path / f"checkpoint_{epoch + 1:06d}.pfck"
                _fields.save_checkpoint(
                    path, params,
                    metadata={"epoch": epoch + 1, "seed": config.seed,
                              "prompt": config.prompt},
                )
                checkpoint_paths.append(str(path))
    finally:
        if log_writer is not None:
            log_writer.close()

    mesh = _evalx.marching_cubes(
        lambda pts: _fields.sdf_forward(params, pts)[0],
        (region.lo, region.hi),
        config.mesh_resolution,
    )

    mesh_path = None
    if out_path is not None:
        final = out_path / "checkpoint_final.pfck"
        _fields.save_checkpoint(
            final, params,
            metadata={"epoch": config.epochs, "seed": config.seed,
                      "prompt": config.prompt},
        )
        checkpoint_paths.append(str(final))
        mesh_path = str(out_path / "mesh.ply")
        _evalx.save_mesh_ply(mesh_path, mesh)

    return TrainResult(
        params=params,
        mesh=mesh,
        history=history,
        checkpoint_paths=checkpoint_paths,
        mesh_path=mesh_path,
        loss_log_path=(
            str(out_path / "losses.csv") if out_path is not None else None
        ),
    )
