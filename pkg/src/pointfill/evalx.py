"""Surface extraction and evaluation: marching cubes on the SDF zero level
set, Chamfer distance in millimeters, point-to-point ICP, mesh sampling and
mesh I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _ply
from .geometry import RigidTransform, Rotation3

_DEGENERATE_AREA = 1e-12
_EVAL_CHUNK = 262144


@dataclass
class TriangleMesh:
    """Triangle soup with shared vertices; no zero-area triangles."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(
            -1, 3
        )
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise ValueError("face indices out of range")

    @property
    def is_empty(self) -> bool:
        return self.faces.shape[0] == 0

    def areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def euler_characteristic(self) -> int:
        v = len(np.unique(self.faces.reshape(-1)))
        edges = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        edges = np.sort(edges, axis=1)
        e = len(np.unique(edges, axis=0))
        f = self.faces.shape[0]
        return v - e + f


def marching_cubes(f, bounds, resolution) -> TriangleMesh:
    """Triangulate the zero level set of a scalar field callable.

    ``f`` maps (B, 3) points to (B,) values; ``bounds`` is (lo, hi) with
    3-vectors; ``resolution`` is the cell count per axis (scalar or triple,
    at least 2). Triangles are oriented so normals point toward f > 0; an
    all-positive or all-negative field yields an empty mesh.
    """
    from skimage import measure

    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,)).copy()
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2 cells per axis")
    if np.any(hi <= lo):
        raise ValueError("bounds must have positive extent")

    axes = [np.linspace(lo[i], hi[i], res[i] + 1) for i in range(3)]
    grid = np.stack(
        np.meshgrid(*axes, indexing="ij"), axis=-1
    ).reshape(-1, 3)
    values = np.empty(grid.shape[0])
    for start in range(0, grid.shape[0], _EVAL_CHUNK):
        chunk = grid[start : start + _EVAL_CHUNK]
        values[start : start + _EVAL_CHUNK] = np.asarray(f(chunk)).reshape(-1)
    volume = values.reshape(res[0] + 1, res[1] + 1, res[2] + 1)

    if volume.min() > 0 or volume.max() < 0:
        return TriangleMesh(
            vertices=np.zeros((0, 3)), faces=np.zeros((0, 3), dtype=np.int64)
        )
    spacing = tuple((hi - lo) / res)
    verts, faces, _, _ = measure.marching_cubes(
        volume, level=0.0, spacing=spacing, gradient_direction="ascent"
    )
    verts = verts + lo[None, :]
    mesh = TriangleMesh(vertices=verts, faces=faces)
    mesh = _drop_degenerate(mesh)
    return _orient_outward(mesh, f)


def _drop_degenerate(mesh: TriangleMesh) -> TriangleMesh:
    if mesh.is_empty:
        return mesh
    keep = mesh.areas() > _DEGENERATE_AREA
    faces = mesh.faces[keep]
    used = np.unique(faces.reshape(-1))
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(vertices=mesh.vertices[used], faces=remap[faces])


def _orient_outward(mesh: TriangleMesh, f) -> TriangleMesh:
    """Flip all faces if triangle normals point toward f < 0."""
    if mesh.is_empty:
        return mesh
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    n = np.cross(b - a, c - a)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.maximum(norms, 1e-300)
    centers = (a + b + c) / 3.0
    eps = float(np.median(norms)) ** 0.5 * 1e-3 + 1e-6
    delta = np.asarray(f(centers + eps * n)) - np.asarray(
        f(centers - eps * n)
    )
    if np.median(delta) < 0:
        return TriangleMesh(
            vertices=mesh.vertices, faces=mesh.faces[:, [0, 2, 1]]
        )
    return mesh


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance in the input units: half the sum of the
    two mean nearest-neighbor distances."""
    pa = np.atleast_2d(np.asarray(a, dtype=np.float64))
    pb = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if pa.size == 0 or pb.size == 0:
        raise ValueError("chamfer distance needs two nonempty point sets")
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def chamfer_mm(a, b) -> float:
    """Chamfer distance in millimeters for point sets given in meters."""
    return 1000.0 * chamfer(a, b)


def icp_align(
    source,
    target,
    init: RigidTransform | None = None,
    max_iters: int = 50,
    tol: float = 1e-8,
) -> tuple[RigidTransform, bool, float]:
    """Point-to-point ICP with closed-form SVD updates.

    Returns (transform, converged, final rms). Degenerate correspondence
    covariance (e.g. collinear points) stops early with converged=False and
    the best transform found so far. The rms never increases between
    accepted iterations.
    """
    src = np.atleast_2d(np.asarray(source, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if src.shape[0] < 3 or tgt.shape[0] < 3:
        raise ValueError("ICP needs at least 3 points on each side")
    transform = init if init is not None else RigidTransform.identity()
    tree = cKDTree(tgt)

    best = (transform, np.inf)
    prev_rms = np.inf
    converged = False
    for _ in range(int(max_iters)):
        moved = transform.apply(src)
        dists, idx = tree.query(moved)
        rms = float(np.sqrt(np.mean(dists**2)))
        if rms < best[1]:
            best = (transform, rms)
        if abs(prev_rms - rms) < tol:
            converged = True
            break
        if rms > prev_rms * (1 + 1e-12):
            break
        prev_rms = rms

        matched = tgt[idx]
        s_bar = src.mean(axis=0)
        t_bar = matched.mean(axis=0)
        h = (src - s_bar).T @ (matched - t_bar)
        u, s, vt = np.linalg.svd(h)
        if s[1] < 1e-12 * max(s[0], 1e-300):
            return best[0], False, best[1]
        d = np.sign(np.linalg.det(vt.T @ u.T))
        r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
        t = t_bar - r @ s_bar
        transform = RigidTransform(rotation=Rotation3(r), translation=t)
    return best[0], converged, best[1]


def sample_mesh(mesh: TriangleMesh, n: int, seed=None) -> np.ndarray:
    """n points uniform by surface area; deterministic per seed."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has no positive-area triangles")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=int(n), p=areas / total)
    a = mesh.vertices[mesh.faces[idx, 0]]
    b = mesh.vertices[mesh.faces[idx, 1]]
    c = mesh.vertices[mesh.faces[idx, 2]]
    u = rng.uniform(size=(int(n), 1))
    v = rng.uniform(size=(int(n), 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    return a + u * (b - a) + v * (c - a)


def save_mesh_ply(path, mesh: TriangleMesh) -> None:
    """Binary little-endian PLY with float32 vertices."""
    _ply.write_mesh_binary(path, mesh.vertices, mesh.faces)


def load_mesh_ply(path) -> TriangleMesh:
    data = _ply.read_ply(path)
    faces = data["faces"]
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    return TriangleMesh(vertices=data["vertices"], faces=faces)
