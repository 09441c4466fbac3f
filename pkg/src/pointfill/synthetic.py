"""Synthetic scan fixtures built from analytic geometry.

These generators drive the demos and the end-to-end checks: a sphere is
"scanned" by pinhole cameras via exact ray-sphere intersection, the upper
half of the surface becomes the partial observation, and reference views of
the full sphere provide deterministic guidance targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DensityParams
from .geometry import CameraIntrinsics, Plane, camera_update, look_at
from .guidance import ReferenceView
from .ingest import SensorObservation, normalize_observation
from .renderer import SamplingConfig, render_view_callable


def sphere_sdf(center, radius: float):
    """Batched signed distance to a sphere; negative inside."""
    c = np.asarray(center, dtype=np.float64)

    def f(pts):
        return np.linalg.norm(np.atleast_2d(pts) - c, axis=1) - radius

    return f


def ray_sphere_first_hit(origins, dirs, center, radius):
    """First intersection of rays with a sphere.

    Returns (hit mask, distance); distance is valid where hit. Rays are
    assumed to start outside the sphere.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    c = np.asarray(center, dtype=np.float64)
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    q = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - q
    hit = disc >= 0
    s = np.full(o.shape[0], np.nan)
    root = np.sqrt(np.maximum(disc, 0.0))
    near = -b - root
    hit = hit & (near > 0)
    s[hit] = near[hit]
    return hit, s


@dataclass
class SphereScanFixture:
    """A normalized partial scan of a sphere plus the ground truth needed
    to evaluate completions of it."""

    observation: SensorObservation
    sphere_center: np.ndarray  # normalized frame
    sphere_radius: float  # normalized frame
    intrinsics: CameraIntrinsics
    grid: int


def hemisphere_scan(
    radius: float = 0.5,
    sensor_distance: float = 2.0,
    sensor_elevation_deg: float = 45.0,
    n_cameras: int = 4,
    grid: int = 32,
    fx: float = 40.0,
) -> SphereScanFixture:
    """Scan the upper hemisphere of an origin-centered sphere.

    ``n_cameras`` pinhole cameras sit at the given elevation, evenly spread
    in azimuth, each contributing a ``grid x grid`` ray bundle. Rays whose
    first sphere hit lies on the upper hemisphere become observed rays with
    exact depths; rays that miss the sphere entirely become empty rays;
    rays striking the lower hemisphere are dropped. The result is
    normalized (centered, max point norm 0.5) with the ground plane tangent
    to the sphere bottom, and camera 0 (azimuth 0) is the sensor pose.
    """
    intr = CameraIntrinsics(
        fx=fx, fy=fx, cx=(grid - 1) / 2.0, cy=(grid - 1) / 2.0,
        width=grid, height=grid,
    )
    el = np.deg2rad(sensor_elevation_deg)

    all_origins, all_dirs, all_mask, all_depth = [], [], [], []
    pose0 = None
    for k in range(n_cameras):
        az = 2.0 * np.pi * k / n_cameras
        pos = sensor_distance * np.array(
            [np.sin(az) * np.cos(el), -np.cos(az) * np.cos(el), np.sin(el)]
        )
        pose = look_at(pos)
        if k == 0:
            pose0 = pose
        u, v = np.meshgrid(
            np.arange(grid, dtype=np.float64),
            np.arange(grid, dtype=np.float64),
        )
        d_cam = np.stack(
            [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)],
            axis=-1,
        ).reshape(-1, 3)
        dirs = d_cam @ pose.rotation.matrix.T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(pos, dirs.shape).copy()
        hit, dist = ray_sphere_first_hit(origins, dirs, np.zeros(3), radius)
        pts = origins + np.nan_to_num(dist)[:, None] * dirs
        upper = hit & (pts[:, 2] > 0.0)
        keep = upper | ~hit  # drop rays striking the lower hemisphere
        all_origins.append(origins[keep])
        all_dirs.append(dirs[keep])
        all_mask.append(upper[keep])
        all_depth.append(np.where(upper, np.nan_to_num(dist), 0.0)[keep])

    origins = np.concatenate(all_origins)
    dirs = np.concatenate(all_dirs)
    mask = np.concatenate(all_mask)
    depth = np.concatenate(all_depth)
    points = origins[mask] + depth[mask, None] * dirs[mask]

    obs = SensorObservation(
        points=points,
        ray_origins=origins,
        ray_dirs=dirs,
        mask=mask,
        depth=depth,
        pose=pose0,
        intrinsics=intr,
        pixels=None,
        plane=Plane(normal=np.array([0.0, 0.0, 1.0]), offset=radius),
        kind="depth-camera",
    )
    transform, obs = normalize_observation(obs)
    return SphereScanFixture(
        observation=obs,
        sphere_center=transform.apply(np.zeros(3)),
        sphere_radius=radius * transform.scale,
        intrinsics=intr,
        grid=grid,
    )


def sphere_reference_views(
    fixture: SphereScanFixture,
    dp: DensityParams,
    sampling: SamplingConfig,
    n_azimuths: int = 12,
    resolution: tuple | None = None,
    color=(0.75, 0.75, 0.75),
) -> dict:
    """Render the full (normalized) sphere from cameras orbited around the
    sensor pose at every reference azimuth. Stored foreground + opacity, so
    mock guidance can composite any background behind them."""
    obs = fixture.observation
    sdf = sphere_sdf(fixture.sphere_center, fixture.sphere_radius)
    rgb = np.asarray(color, dtype=np.float64)

    def color_fn(pts):
        return np.broadcast_to(rgb, (np.atleast_2d(pts).shape[0], 3)).copy()

    res = resolution or (fixture.grid, fixture.grid)
    views = {}
    for k in range(n_azimuths):
        az = 360.0 * k / n_azimuths
        cam = camera_update(obs.pose, obs.plane, az, 0.0)
        out = render_view_callable(
            sdf, color_fn, dp, cam, fixture.intrinsics, res, sampling,
            seed=0, bg_color=None,
        )
        key = f"az_{int(round(az)):03d}"
        views[key] = ReferenceView(
            rgb=out.rgb, opacity=out.opacity, azimuth_deg=az
        )
    return views


def sphere_surface_points(
    fixture: SphereScanFixture, n: int, seed=0
) -> np.ndarray:
    """Uniform samples of the full normalized sphere surface (the ground
    truth a completion should recover)."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(int(n), 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return fixture.sphere_center + fixture.sphere_radius * d
