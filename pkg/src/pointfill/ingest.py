"""Turning raw sensor data into a SensorObservation.

Depth images are z-depth in millimeters (16-bit PNG, the Redwood
container convention) and are converted to along-ray distances with the
pinhole secant factor. LiDAR clouds are projected to a 64x1024 range image
by azimuth/elevation binning, with the training crop taken as the occupied
column span plus 5 columns of margin on each side.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _ply
from .errors import EmptyObservationError, FormatError
from .geometry import CameraIntrinsics, CameraPose, Plane, Rotation3

LIDAR_HEIGHT = 64
LIDAR_WIDTH = 1024
LIDAR_CROP_MARGIN = 5
OBB_RATIO_THRESHOLD = 1.7
NORMALIZED_MAX_NORM = 0.5


@dataclass(frozen=True)
class NormalizationTransform:
    """Centroid shift followed by uniform scale: ``p' = (p - shift) * scale``."""

    shift: np.ndarray
    scale: float

    def __post_init__(self):
        s = np.asarray(self.shift, dtype=np.float64)
        if s.shape != (3,):
            raise ValueError("shift must be a 3-vector")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "shift", s)
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.shift) * self.scale

    def apply_distance(self, d):
        return np.asarray(d, dtype=np.float64) * self.scale

    def apply_pose(self, pose: CameraPose) -> CameraPose:
        return CameraPose(
            rotation=pose.rotation, translation=self.apply(pose.translation)
        )

    def apply_plane(self, plane: Plane) -> Plane:
        return Plane(
            normal=plane.normal,
            offset=self.scale
            * (plane.offset + float(plane.normal @ self.shift)),
        )

    def inverse(self) -> "NormalizationTransform":
        return NormalizationTransform(
            shift=-self.shift * self.scale, scale=1.0 / self.scale
        )

    @classmethod
    def identity(cls) -> "NormalizationTransform":
        return cls(shift=np.zeros(3), scale=1.0)


@dataclass
class SensorObservation:
    """Segmented sensor data: foreground points, the full set of sensor
    rays with per-ray masks and (where observed) along-ray depths, plus the
    sensor pose and scene annotations."""

    points: np.ndarray  # (N, 3)
    ray_origins: np.ndarray  # (K, 3)
    ray_dirs: np.ndarray  # (K, 3), unit
    mask: np.ndarray  # (K,) bool
    depth: np.ndarray  # (K,), valid where mask
    pose: CameraPose
    intrinsics: CameraIntrinsics | None = None
    pixels: np.ndarray | None = None  # (K, 2) source pixel (u, v)
    plane: Plane | None = None
    transform: NormalizationTransform | None = None
    kind: str = "depth-camera"

    @property
    def n_rays(self) -> int:
        return self.ray_dirs.shape[0]

    def validate(self, tol: float = 1e-6) -> None:
        """Check the structural invariants; raises ValueError on breach."""
        if self.points.shape[0] != int(np.count_nonzero(self.mask)):
            raise ValueError("|points| must equal the number of mask-1 rays")
        obs = self.mask
        hit = (
            self.ray_origins[obs]
            + self.depth[obs, None] * self.ray_dirs[obs]
        )
        err = np.abs(hit - self.points).max() if hit.size else 0.0
        if err > tol:
            raise ValueError(
                f"points deviate from their rays by {err:.3e} > {tol:.0e}"
            )
        if self.transform is not None:
            max_norm = float(np.linalg.norm(self.points, axis=1).max())
            if abs(max_norm - NORMALIZED_MAX_NORM) > 1e-9:
                raise ValueError(
                    f"normalized max point norm {max_norm} != 0.5"
                )


def depth_to_observation(
    depth_image: np.ndarray,
    seg_mask: np.ndarray,
    intr: CameraIntrinsics,
    pose: CameraPose,
) -> SensorObservation:
    """Build an observation from a z-depth image (millimeters) and a binary
    foreground mask. Every pixel becomes a ray; pixels with foreground and
    nonzero depth become mask-1 rays carrying the along-ray distance."""
    depth_image = np.asarray(depth_image)
    seg = np.asarray(seg_mask)
    if depth_image.shape != seg.shape:
        raise ValueError("depth image and segmentation mask sizes differ")
    h, w = depth_image.shape
    if (w, h) != (intr.width, intr.height):
        raise ValueError(
            f"intrinsics are for {intr.width}x{intr.height}, image is "
            f"{w}x{h}"
        )
    valid = (seg > 0) & (depth_image > 0)
    if not np.any(valid):
        raise EmptyObservationError("no foreground pixels with valid depth")

    u, v = np.meshgrid(
        np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)
    )
    d_cam = np.stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)],
        axis=-1,
    ).reshape(-1, 3)
    secant = np.linalg.norm(d_cam, axis=1)
    dirs = (d_cam / secant[:, None]) @ pose.rotation.matrix.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()

    z = depth_image.reshape(-1).astype(np.float64) * 1e-3
    mask = valid.reshape(-1)
    dist = np.zeros_like(z)
    dist[mask] = z[mask] * secant[mask]
    points = origins[mask] + dist[mask, None] * dirs[mask]
    pixels = np.stack([u.reshape(-1), v.reshape(-1)], axis=1).astype(
        np.int64
    )
    return SensorObservation(
        points=points,
        ray_origins=origins,
        ray_dirs=dirs,
        mask=mask,
        depth=dist,
        pose=pose,
        intrinsics=intr,
        pixels=pixels,
        kind="depth-camera",
    )


@dataclass
class RangeImage:
    """Spherical projection of a LiDAR cloud onto a 64x1024 grid.

    ``ranges`` is 0 on empty cells; ``directions`` holds unit rays (the
    actual point direction on occupied cells, the bin center elsewhere).
    Crop bounds are the occupied column extrema widened by 5 columns; the
    crop width is their difference, i.e. occupied span + 10.
    """

    ranges: np.ndarray  # (64, 1024)
    directions: np.ndarray  # (64, 1024, 3)
    crop_min_col: int
    crop_max_col: int
    vertical_fov_deg: float

    @property
    def crop_width(self) -> int:
        return self.crop_max_col - self.crop_min_col


def lidar_project(points, vertical_fov_deg: float = 26.8) -> RangeImage:
    """Project points (sensor at the origin) onto the range grid; the
    nearest return wins each cell."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise EmptyObservationError("no LiDAR points to project")
    r = np.linalg.norm(pts, axis=1)
    if np.any(r < 1e-12):
        raise ValueError("points coincide with the sensor origin")
    az = np.arctan2(pts[:, 1], pts[:, 0])
    el = np.arcsin(np.clip(pts[:, 2] / r, -1.0, 1.0))
    half_fov = np.deg2rad(vertical_fov_deg) / 2.0

    col = np.floor((az + np.pi) / (2 * np.pi) * LIDAR_WIDTH).astype(int)
    col = np.clip(col, 0, LIDAR_WIDTH - 1)
    row = np.floor(
        (half_fov - el) / (2 * half_fov) * LIDAR_HEIGHT
    ).astype(int)
    row = np.clip(row, 0, LIDAR_HEIGHT - 1)

    ranges = np.zeros((LIDAR_HEIGHT, LIDAR_WIDTH))
    winner = np.full((LIDAR_HEIGHT, LIDAR_WIDTH), -1, dtype=np.int64)
    order = np.argsort(-r)  # nearest written last wins
    ranges[row[order], col[order]] = r[order]
    winner[row[order], col[order]] = order

    rows_c = (np.arange(LIDAR_HEIGHT) + 0.5) / LIDAR_HEIGHT
    cols_c = (np.arange(LIDAR_WIDTH) + 0.5) / LIDAR_WIDTH
    el_c = half_fov - rows_c * 2 * half_fov
    az_c = cols_c * 2 * np.pi - np.pi
    ce, se = np.cos(el_c), np.sin(el_c)
    ca, sa = np.cos(az_c), np.sin(az_c)
    directions = np.empty((LIDAR_HEIGHT, LIDAR_WIDTH, 3))
    directions[..., 0] = ce[:, None] * ca[None, :]
    directions[..., 1] = ce[:, None] * sa[None, :]
    directions[..., 2] = se[:, None] * np.ones_like(ca)[None, :]
    occ = winner >= 0
    directions[occ] = pts[winner[occ]] / r[winner[occ], None]

    occupied_cols = np.flatnonzero(occ.any(axis=0))
    crop_min = int(occupied_cols.min()) - LIDAR_CROP_MARGIN
    crop_max = int(occupied_cols.max()) + LIDAR_CROP_MARGIN
    crop_min = max(crop_min, 0)
    crop_max = min(crop_max, LIDAR_WIDTH - 1)
    return RangeImage(
        ranges=ranges,
        directions=directions,
        crop_min_col=crop_min,
        crop_max_col=crop_max,
        vertical_fov_deg=vertical_fov_deg,
    )


def lidar_to_observation(
    points, vertical_fov_deg: float = 26.8
) -> SensorObservation:
    """Observation over the cropped range-image grid: every cell in the
    crop is a ray; occupied cells carry the winning return as a point."""
    img = lidar_project(points, vertical_fov_deg)
    cols = np.arange(img.crop_min_col, img.crop_max_col + 1)
    sub_dirs = img.directions[:, cols, :].reshape(-1, 3)
    sub_rng = img.ranges[:, cols].reshape(-1)
    mask = sub_rng > 0
    if not np.any(mask):
        raise EmptyObservationError("crop contains no occupied cells")
    origins = np.zeros_like(sub_dirs)
    pts = sub_rng[mask, None] * sub_dirs[mask]
    # Orient the sensor pose along the mean occupied ray so the camera
    # curriculum has a meaningful principal axis (identity would point +z,
    # parallel to a flat ground normal).
    toward = sub_dirs[mask].mean(axis=0)
    toward /= np.linalg.norm(toward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(toward @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(toward, up)
    right /= np.linalg.norm(right)
    down = np.cross(toward, right)
    pose = CameraPose(
        rotation=Rotation3(np.stack([right, down, toward], axis=1)),
        translation=np.zeros(3),
    )
    return SensorObservation(
        points=pts,
        ray_origins=origins,
        ray_dirs=sub_dirs,
        mask=mask,
        depth=sub_rng,
        pose=pose,
        intrinsics=None,
        pixels=None,
        kind="lidar",
    )


def centralize_and_scale(
    points, kind: str = "depth-camera"
) -> tuple[NormalizationTransform, np.ndarray]:
    """Center the cloud and scale it so the largest point norm is 0.5.

    The centroid is the center of mass unless the cloud is LiDAR or the
    ratio of largest to smallest distance from the center of mass to the
    oriented-bounding-box corners exceeds 1.7, in which case the box center
    is used (elongated clouds seen end-on bias the center of mass).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] < 4:
        raise ValueError("need at least 4 points for the oriented box")
    com = pts.mean(axis=0)
    centered = pts - com
    cov = centered.T @ centered
    _, axes = np.linalg.eigh(cov)
    proj = centered @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    corners_local = np.array(
        [[a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1])
         for c in (lo[2], hi[2])]
    )
    corners = com + corners_local @ axes.T
    dists = np.linalg.norm(corners - com, axis=1)
    if dists.min() < 1e-12:
        ratio = np.inf
    else:
        ratio = float(dists.max() / dists.min())
    if kind == "lidar" or ratio > OBB_RATIO_THRESHOLD:
        centroid = com + ((lo + hi) / 2.0) @ axes.T
    else:
        centroid = com
    radius = float(np.linalg.norm(pts - centroid, axis=1).max())
    if radius < 1e-12:
        raise ValueError("all points coincide; cannot scale")
    transform = NormalizationTransform(
        shift=centroid, scale=NORMALIZED_MAX_NORM / radius
    )
    return transform, transform.apply(pts)


def normalize_observation(
    obs: SensorObservation,
) -> tuple[NormalizationTransform, SensorObservation]:
    """Apply centralize_and_scale to a whole observation: points, rays,
    depths, pose, and plane move into the normalized frame."""
    transform, pts = centralize_and_scale(obs.points, obs.kind)
    return transform, replace(
        obs,
        points=pts,
        ray_origins=transform.apply(obs.ray_origins),
        depth=transform.apply_distance(obs.depth),
        pose=transform.apply_pose(obs.pose),
        plane=(
            transform.apply_plane(obs.plane)
            if obs.plane is not None
            else None
        ),
        transform=transform,
    )


# ---------------------------------------------------------------------------
# File loading


def load_points(path) -> np.ndarray:
    """Load a point cloud from PLY (ASCII or binary) or whitespace XYZ
    text. '#' comments and blank lines are allowed in XYZ files."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:3] == b"ply":
        return _ply.read_ply(path)["vertices"]
    return _load_xyz(path)


def _load_xyz(path) -> np.ndarray:
    rows = []
    with open(path, "r", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) < 3:
                raise FormatError(
                    f"line {line_no}: expected at least 3 coordinates, "
                    f"got {len(parts)}"
                )
            try:
                rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError:
                raise FormatError(
                    f"line {line_no}: cannot parse coordinates from "
                    f"{text[:60]!r}"
                ) from None
    if not rows:
        raise FormatError("file contains no points")
    return np.asarray(rows, dtype=np.float64)


def save_points_ply(path, points) -> None:
    """ASCII PLY writer whose output round-trips float64 exactly."""
    _ply.write_points_ascii(path, points)


def load_intrinsics(path) -> CameraIntrinsics:
    """Text intrinsics: first data line 'fx fy cx cy', second line
    'width height'. '#' comments and blank lines are ignored."""
    lines = []
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                lines.append((line_no, text))
    if len(lines) < 2:
        raise FormatError("intrinsics file needs two data lines")
    try:
        fx, fy, cx, cy = (float(t) for t in lines[0][1].split())
    except ValueError:
        raise FormatError(
            f"line {lines[0][0]}: expected 'fx fy cx cy'"
        ) from None
    try:
        w, h = (int(float(t)) for t in lines[1][1].split())
    except ValueError:
        raise FormatError(
            f"line {lines[1][0]}: expected 'width height'"
        ) from None
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)


def save_intrinsics(path, intr: CameraIntrinsics) -> None:
    with open(path, "w") as fh:
        fh.write(f"{intr.fx:.17g} {intr.fy:.17g} {intr.cx:.17g} {intr.cy:.17g}\n")
        fh.write(f"{intr.width} {intr.height}\n")


def load_depth_png(path) -> np.ndarray:
    """16-bit grayscale PNG depth in millimeters, as uint16."""
    from PIL import Image

    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise FormatError(f"unsupported depth PNG dtype {arr.dtype}")
    if arr.ndim != 2:
        raise FormatError("depth PNG must be single-channel")
    return arr.astype(np.uint16)


def load_mask_png(path) -> np.ndarray:
    """Binary mask PNG; any nonzero value counts as foreground."""
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 0


def save_depth_png_mm(path, depth_mm: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(depth_mm, dtype=np.uint16)).save(path)


def save_mask_png(path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)

def load_scan_prompts() -> dict:
    """Bundled text prompts for the public depth-camera scans, keyed by
    scan id; each value is (scan name, prompt)."""
    import csv
    from importlib import resources

    prompts = {}
    ref = resources.files("pointfill").joinpath("data/scan_prompts.csv")
    with ref.open("r") as fh:
        for row in csv.DictReader(fh):
            prompts[row["scan_id"]] = (row["scan_name"], row["prompt"])
    return prompts
