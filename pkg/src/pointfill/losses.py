"""Objective terms and their weighted assembly.

Five sensor/regularity terms are computed as scalar values with exact
parameter gradients; the score-distillation term never has a scalar value
and enters training directly as a gradient through the renderer, so the
breakdown and total exclude it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import fields as _fields
from .fields import FieldGrads, FieldParams
from .geometry import Plane

LOSS_LOG_FIELDS = [
    "iteration",
    "epoch",
    "loss_point",
    "loss_mask",
    "loss_depth",
    "loss_eikonal",
    "loss_plane",
    "total",
]


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the sensor-compatibility and regularity terms."""

    mask: float = 1e5
    depth: float = 1e5
    point: float = 1e5
    eikonal: float = 1e4
    plane: float = 1e5

    def __post_init__(self):
        for name in ("mask", "depth", "point", "eikonal", "plane"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    point: float
    mask: float
    depth: float
    eikonal: float
    plane: float
    total: float


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, the region of interest for auxiliary samples."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("box corners must be 3-vectors")
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, half_extent: float) -> "Box":
        h = float(half_extent)
        return cls(lo=-h * np.ones(3), hi=h * np.ones(3))


def point_loss(params: FieldParams, points) -> float:
    """Mean |f| over the input points; zero iff the surface interpolates
    them."""
    value, _ = _point_loss(params, points, need_grads=False)
    return value


def point_loss_grad(params, points) -> tuple[float, FieldGrads]:
    return _point_loss(params, points, need_grads=True)


def _point_loss(params, points, need_grads):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise ValueError("point loss needs at least one point")
    f, cache = _fields.sdf_forward(params, pts)
    value = float(np.mean(np.abs(f)))
    if not need_grads:
        return value, None
    df = np.sign(f) / f.shape[0]
    grads, _ = _fields.mlp_backward(cache, df)
    return value, grads


def mask_loss(mask, opacity) -> float:
    """Mean absolute difference between observed {0,1} masks and rendered
    opacities."""
    m = np.asarray(mask, dtype=np.float64)
    o = np.asarray(opacity, dtype=np.float64)
    if m.shape != o.shape or m.size == 0:
        raise ValueError("mask and opacity must be equal-length, nonempty")
    return float(np.mean(np.abs(m - o)))


def mask_loss_dopacity(mask, opacity) -> np.ndarray:
    """d(mask_loss)/d(opacity), for chaining into the renderer backward."""
    m = np.asarray(mask, dtype=np.float64)
    o = np.asarray(opacity, dtype=np.float64)
    return np.sign(o - m) / m.size


def depth_loss(depth_obs, depth_render, mask) -> float:
    """Mean squared depth error over observed (mask = 1) rays; rays without
    an observation carry no depth and are excluded."""
    d = np.asarray(depth_obs, dtype=np.float64)
    dr = np.asarray(depth_render, dtype=np.float64)
    m = np.asarray(mask)
    if not (d.shape == dr.shape == m.shape):
        raise ValueError("depth/render/mask lengths disagree")
    obs = m > 0
    k = int(np.count_nonzero(obs))
    if k == 0:
        warnings.warn("depth loss: no observed rays in batch", RuntimeWarning)
        return 0.0
    return float(np.mean((d[obs] - dr[obs]) ** 2))


def depth_loss_ddepth(depth_obs, depth_render, mask) -> np.ndarray:
    """d(depth_loss)/d(rendered depth); zero on unobserved rays."""
    d = np.asarray(depth_obs, dtype=np.float64)
    dr = np.asarray(depth_render, dtype=np.float64)
    obs = np.asarray(mask) > 0
    out = np.zeros_like(dr)
    k = int(np.count_nonzero(obs))
    if k:
        out[obs] = 2.0 * (dr[obs] - d[obs]) / k
    return out


def eikonal_loss(grad_norms) -> float:
    """Mean |  |grad f| - 1 | over the eikonal sample set."""
    g = np.asarray(grad_norms, dtype=np.float64)
    if g.size == 0:
        raise ValueError("eikonal loss needs at least one gradient norm")
    return float(np.mean(np.abs(g - 1.0)))


def eikonal_loss_grad(params, points) -> tuple[float, FieldGrads]:
    """Eikonal loss over points, with exact parameter gradients through the
    spatial gradient of the SDF."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise ValueError("eikonal loss needs at least one point")
    g, sg_cache = _fields.spatial_grad_forward(params, pts)
    norms = np.linalg.norm(g, axis=1)
    value = float(np.mean(np.abs(norms - 1.0)))
    safe = np.maximum(norms, 1e-12)
    dg = (np.sign(norms - 1.0) / (pts.shape[0] * safe))[:, None] * g
    grads = _fields.spatial_grad_backward(sg_cache, dg)
    return value, grads


def plane_loss(params: FieldParams, points_below) -> float:
    """Sum of hinge penalties max(-f, 0) over samples below the ground
    plane; penalizes surface drifting underground. Empty input gives 0."""
    value, _ = _plane_loss(params, points_below, need_grads=False)
    return value


def plane_loss_grad(params, points_below) -> tuple[float, FieldGrads]:
    return _plane_loss(params, points_below, need_grads=True)


def _plane_loss(params, points_below, need_grads):
    pts = np.atleast_2d(np.asarray(points_below, dtype=np.float64))
    if pts.size == 0:
        value = 0.0
        return value, (
            FieldGrads.zeros_like(params) if need_grads else None
        )
    f, cache = _fields.sdf_forward(params, pts)
    value = float(np.sum(np.maximum(-f, 0.0)))
    if not need_grads:
        return value, None
    df = -(f < 0).astype(np.float64)
    grads, _ = _fields.mlp_backward(cache, df)
    return value, grads


def total_loss(
    point: float,
    mask: float,
    depth: float,
    eikonal: float,
    plane: float,
    weights: LossWeights,
) -> LossBreakdown:
    """Weighted sum of the five scalar terms. The score-distillation
    contribution is a parameter-space gradient, never a value, and is not
    part of the total."""
    total = (
        weights.mask * mask
        + weights.depth * depth
        + weights.point * point
        + weights.eikonal * eikonal
        + weights.plane * plane
    )
    return LossBreakdown(
        point=point,
        mask=mask,
        depth=depth,
        eikonal=eikonal,
        plane=plane,
        total=total,
    )


def sample_aux_points(
    plane: Plane, region: Box, n: int, seed=None
) -> tuple[np.ndarray, np.ndarray]:
    """Fresh auxiliary samples: ``n`` uniform points in the region for the
    eikonal term, and ``n`` uniform points in region-below-plane for the
    plane term (empty, with a warning, if the region is entirely above).

    Deterministic per seed.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    extent = region.hi - region.lo
    eik = region.lo + rng.uniform(size=(n, 3)) * extent

    below = np.zeros((0, 3))
    corners = region.lo + extent * (
        np.array(np.meshgrid([0, 1], [0, 1], [0, 1])).T.reshape(-1, 3)
    )
    if np.all(plane.side(corners) >= 0):
        warnings.warn(
            "plane-loss region is entirely above the plane; no samples",
            RuntimeWarning,
        )
        return below, eik
    chunks = []
    got = 0
    attempts = 0
    while got < n and attempts < 1000:
        cand = region.lo + rng.uniform(size=(max(n, 64), 3)) * extent
        keep = cand[plane.side(cand) < 0]
        if keep.size:
            chunks.append(keep)
            got += keep.shape[0]
        attempts += 1
    if got < n:
        warnings.warn(
            "plane-loss rejection sampling under-filled "
            f"({got}/{n} points)",
            RuntimeWarning,
        )
    below = (
        np.concatenate(chunks, axis=0)[:n] if chunks else np.zeros((0, 3))
    )
    return below, eik


class LossLogWriter:
    """Per-iteration CSV log of the loss breakdown.

    Columns: iteration, epoch, loss_point, loss_mask, loss_depth,
    loss_eikonal, loss_plane, total.
    """

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(LOSS_LOG_FIELDS)

    def write(self, iteration: int, epoch: int, breakdown: LossBreakdown):
        self._writer.writerow(
            [
                iteration,
                epoch,
                repr(breakdown.point),
                repr(breakdown.mask),
                repr(breakdown.depth),
                repr(breakdown.eikonal),
                repr(breakdown.plane),
                repr(breakdown.total),
            ]
        )

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
