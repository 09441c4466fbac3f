"""Rigid-body math: rotations, camera poses, rays, planes.

Conventions used throughout the package:

* Camera poses are camera-to-world. The camera looks along +z of its own
  frame, so the principal axis is the third column of the rotation matrix.
* Planes are stored as a unit normal ``n`` and scalar offset ``d`` with the
  plane being ``{x : n.x + d = 0}``; ``side(x) = n.x + d`` is the signed
  distance.
* Angles are degrees at every public boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateElevationAxisError,
    InsufficientDataError,
    NoPlaneFoundError,
)

_ORTHO_TOL = 1e-9


def _as_vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class Rotation3:
    """A proper rotation, stored as a 3x3 orthonormal matrix with det +1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if not np.allclose(m @ m.T, np.eye(3), atol=_ORTHO_TOL, rtol=0.0):
            raise ValueError("matrix is not orthonormal within 1e-9")
        if abs(np.linalg.det(m) - 1.0) > _ORTHO_TOL:
            raise ValueError("matrix determinant is not +1 within 1e-9")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate one vector or an (N, 3) stack of vectors."""
        v = np.asarray(v, dtype=np.float64)
        return v @ self.matrix.T

    def compose(self, other: "Rotation3") -> "Rotation3":
        """Return self o other (other applied first)."""
        return Rotation3(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world pose. ``translation`` is the camera center."""

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "translation", _as_vec3(self.translation, "translation")
        )

    @property
    def principal_axis(self) -> np.ndarray:
        """World-frame viewing direction (+z of the camera frame)."""
        return self.rotation.matrix[:, 2].copy()

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        return self.rotation.apply(pts) + self.translation

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - self.translation) @ self.rotation.matrix


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def scaled_to(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics for the same field of view at another resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class Plane:
    """Oriented plane ``{x : normal.x + offset = 0}`` with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = _as_vec3(self.normal, "normal")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length within 1e-9")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = _as_vec3(normal, "normal")
        n = n / np.linalg.norm(n)
        p = _as_vec3(point, "point")
        return cls(normal=n, offset=-float(n @ p))

    def side(self, x) -> np.ndarray:
        """Signed distance(s) of point(s) to the plane."""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.normal + self.offset

    def oriented_toward(self, point) -> "Plane":
        """Flip the normal, if needed, so ``point`` has side(point) >= 0."""
        if self.side(_as_vec3(point, "point")) < 0:
            return Plane(normal=-self.normal, offset=-self.offset)
        return self


@dataclass(frozen=True)
class Ray:
    """Ray with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _as_vec3(self.origin, "origin")
        d = _as_vec3(self.direction, "direction")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length within 1e-9")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Camera-to-world pose at ``position`` with the principal axis toward
    ``target``; +x is screen right, +y is screen down. ``up`` must not be
    parallel to the viewing direction."""
    pos = _as_vec3(position, "position")
    tgt = _as_vec3(target, "target")
    u = _as_vec3(up, "up")
    fwd = tgt - pos
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the target")
    fwd = fwd / norm
    right = np.cross(fwd, u)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right = right / rnorm
    down = np.cross(fwd, right)
    return CameraPose(
        rotation=Rotation3(np.stack([right, down, fwd], axis=1)),
        translation=pos,
    )


def rodrigues_rotation(axis, angle_deg: float) -> Rotation3:
    """Rotation about a unit ``axis`` by ``angle_deg`` degrees, right-handed.

    Raises ValueError if the axis is not unit length within 1e-6.
    """
    a = _as_vec3(axis, "axis")
    if abs(np.linalg.norm(a) - 1.0) > 1e-6:
        raise ValueError("rotation axis must be unit length within 1e-6")
    a = a / np.linalg.norm(a)
    theta = np.deg2rad(float(angle_deg))
    k = np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )
    m = np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)
    return Rotation3(m)


def camera_update(
    c0: CameraPose,
    plane: Plane,
    gamma_azimuth: float,
    gamma_elevation: float,
) -> CameraPose:
    """Orbit the camera about the object center (the origin).

    The azimuth rotation is about the plane normal; the elevation rotation is
    about ``normal x principal_axis``. Both rotation and translation of the
    input pose are rotated, so the camera keeps pointing at the origin and
    ``|t|`` is preserved.

    Raises DegenerateElevationAxisError when the principal axis is parallel
    to the plane normal.
    """
    n = plane.normal
    a0 = c0.principal_axis
    axis_el = np.cross(n, a0)
    norm_el = np.linalg.norm(axis_el)
    if norm_el < 1e-8:
        raise DegenerateElevationAxisError(
            "plane normal is parallel to the camera principal axis"
        )
    r_az = rodrigues_rotation(n, gamma_azimuth)
    r_el = rodrigues_rotation(axis_el / norm_el, gamma_elevation)
    r = r_az.compose(r_el)
    return CameraPose(
        rotation=r.compose(c0.rotation),
        translation=r.apply(c0.translation),
    )


def backproject(intr: CameraIntrinsics, pose: CameraPose, pixel) -> Ray:
    """Ray through pixel ``(u, v)`` under the pinhole model, in world frame.

    Pixel coordinates are continuous; integer coordinates address sample
    centers, and the valid range is [-0.5, size - 0.5] on each axis.
    """
    u, v = float(pixel[0]), float(pixel[1])
    if not (-0.5 <= u <= intr.width - 0.5 and -0.5 <= v <= intr.height - 0.5):
        raise ValueError(
            f"pixel ({u}, {v}) outside image bounds "
            f"{intr.width}x{intr.height}"
        )
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_world = pose.rotation.apply(d_cam)
    d_world = d_world / np.linalg.norm(d_world)
    return Ray(origin=pose.translation, direction=d_world)


def project(intr: CameraIntrinsics, pose: CameraPose, points) -> np.ndarray:
    """Project world point(s) to pixel coordinates. Inverse of backproject
    for points in front of the camera."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cam = pose.world_to_camera(pts)
    z = cam[:, 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points at or behind the camera")
    uv = np.stack(
        [
            intr.fx * cam[:, 0] / z + intr.cx,
            intr.fy * cam[:, 1] / z + intr.cy,
        ],
        axis=-1,
    )
    return uv[0] if np.asarray(points).ndim == 1 else uv


def fit_plane_ransac(
    points,
    inlier_threshold: float,
    iterations: int = 256,
    seed: int = 0,
) -> tuple[Plane, np.ndarray]:
    """RANSAC plane fit over random 3-point hypotheses.

    Returns the plane refit by total least squares over the winning inlier
    set, plus the indices of the inliers of that refit plane. Deterministic
    for a fixed seed.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    n_pts = pts.shape[0]
    if n_pts < 3:
        raise InsufficientDataError(f"need at least 3 points, got {n_pts}")
    if inlier_threshold <= 0:
        raise ValueError("inlier threshold must be positive")

    rng = np.random.default_rng(seed)
    best_count = -1
    best_normal = None
    best_offset = 0.0
    for _ in range(int(iterations)):
        idx = rng.choice(n_pts, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue  # collinear sample
        normal = normal / norm
        dist = np.abs((pts - p0) @ normal)
        count = int(np.count_nonzero(dist <= inlier_threshold))
        if count > best_count:
            best_count = count
            best_normal = normal
            best_offset = -float(normal @ p0)
    if best_normal is None:
        raise NoPlaneFoundError("all RANSAC hypotheses were collinear")

    # Total least squares refit over the winning inliers for stability.
    inliers = np.abs(pts @ best_normal + best_offset) <= inlier_threshold
    sel = pts[inliers]
    centroid = sel.mean(axis=0)
    cov = (sel - centroid).T @ (sel - centroid)
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, 0]
    # Deterministic sign: largest-magnitude component positive.
    if normal[np.argmax(np.abs(normal))] < 0:
        normal = -normal
    plane = Plane(normal=normal, offset=-float(normal @ centroid))
    inlier_idx = np.flatnonzero(np.abs(plane.side(pts)) <= inlier_threshold)
    return plane, inlier_idx


def elevation_of(c0: CameraPose, plane: Plane) -> float:
    """Elevation of the camera viewing direction above the plane, degrees.

    The plane normal is oriented so the camera sits on its positive side;
    positive elevation means the camera looks down toward the plane.
    """
    oriented = plane.oriented_toward(c0.translation)
    s = float(np.clip(-c0.principal_axis @ oriented.normal, -1.0, 1.0))
    return float(np.rad2deg(np.arcsin(s)))


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion ``x -> R x + t``."""

    rotation: Rotation3 = field(default_factory=Rotation3.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(
            self, "translation", _as_vec3(self.translation, "translation")
        )

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.rotation.apply(pts) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform equivalent to applying ``other`` first."""
        return RigidTransform(
            rotation=self.rotation.compose(other.rotation),
            translation=self.rotation.apply(other.translation)
            + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rinv = self.rotation.inverse()
        return RigidTransform(
            rotation=rinv, translation=-rinv.apply(self.translation)
        )
