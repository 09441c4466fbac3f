"""Command-line interface.

``pointfill complete`` runs the full completion pipeline: load sensor data,
estimate/accept the ground plane, normalize, optimize the fields, and write
the mesh, checkpoint, and loss log. ``pointfill eval`` compares a predicted
mesh against ground truth with the Chamfer distance (optionally ICP-refined).

The config file is line-oriented ``key = value`` text with ``#`` comments;
keys mirror the TrainConfig field names (see README). Command-line flags
override config values. The environment variable POINTFILL_GUIDANCE_URL
overrides the endpoint of ``--guidance remote:<url>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalx, guidance, ingest, trainer
from .errors import FormatError
from .fields import DensityParams, EncodingConfig
from .geometry import CameraPose, Plane, Rotation3, fit_plane_ransac
from .losses import LossWeights

GUIDANCE_URL_ENV = "POINTFILL_GUIDANCE_URL"

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def parse_config_file(path) -> dict:
    """Parse the key=value config format into a flat dict of strings."""
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise FormatError(
                    f"{path}:{line_no}: expected 'key = value', got "
                    f"{text!r}"
                )
            key, value = text.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _build_train_config(cfg: dict, args) -> trainer.TrainConfig:
    tc = trainer.TrainConfig(prompt="")

    def geti(key, default):
        return int(cfg[key]) if key in cfg else default

    def getf(key, default):
        return float(cfg[key]) if key in cfg else default

    def getb(key, default):
        return _BOOL[cfg[key].lower()] if key in cfg else default

    weights = LossWeights(
        mask=getf("weight_mask", 1e5),
        depth=getf("weight_depth", 1e5),
        point=getf("weight_point", 1e5),
        eikonal=getf("weight_eikonal", 1e4),
        plane=getf("weight_plane", 1e5),
    )
    resolution = tc.render_resolution
    if "render_resolution" in cfg:
        parts = cfg["render_resolution"].replace("x", " ").split()
        resolution = (int(parts[0]), int(parts[1]))
    sphere_radius = (
        float(cfg["sphere_radius"]) if "sphere_radius" in cfg else None
    )
    near = float(cfg["near"]) if "near" in cfg else None
    far = float(cfg["far"]) if "far" in cfg else None
    point_batch = int(cfg["point_batch"]) if "point_batch" in cfg else None

    tc = trainer.TrainConfig(
        prompt=cfg.get("prompt", ""),
        dataset_kind=cfg.get("dataset_kind", "depth-camera"),
        epochs=geti("epochs", tc.epochs),
        iterations_per_epoch=geti(
            "iterations_per_epoch", tc.iterations_per_epoch
        ),
        learning_rate=getf("learning_rate", tc.learning_rate),
        weights=weights,
        render_resolution=resolution,
        pixel_batch=geti("pixel_batch", tc.pixel_batch),
        aux_samples=geti("aux_samples", tc.aux_samples),
        samples_per_ray=geti("samples_per_ray", tc.samples_per_ray),
        stratified=getb("stratified", tc.stratified),
        near=near,
        far=far,
        render_margin=getf("render_margin", tc.render_margin),
        sphere_radius=sphere_radius,
        hidden=geti("hidden", tc.hidden),
        encoding=EncodingConfig(levels=geti("encoding_levels", 6)),
        density=DensityParams(
            alpha=getf("density_alpha", 100.0),
            beta=getf("density_beta", 1e-3),
        ),
        gamma0_azimuth=getf("gamma0_azimuth", 0.0),
        seed=geti("seed", 0),
        grad_clip=getf("grad_clip", tc.grad_clip),
        checkpoint_interval_epochs=geti(
            "checkpoint_interval_epochs", tc.checkpoint_interval_epochs
        ),
        guidance_scale=getf("guidance_scale", tc.guidance_scale),
        schedule_T=geti("schedule_T", tc.schedule_T),
        schedule_beta_start=getf(
            "schedule_beta_start", tc.schedule_beta_start
        ),
        schedule_beta_end=getf("schedule_beta_end", tc.schedule_beta_end),
        region_half_extent=getf(
            "region_half_extent", tc.region_half_extent
        ),
        mesh_resolution=geti("mesh_resolution", tc.mesh_resolution),
        point_batch=point_batch,
        guidance_error_policy=cfg.get("guidance_error_policy", "fail"),
    )
    if args.prompt is not None:
        tc = replace(tc, prompt=args.prompt)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    return tc


def _parse_pose(text: str) -> CameraPose:
    vals = [float(t) for t in text.split()]
    if len(vals) != 12:
        raise FormatError(
            "pose must be 12 numbers: row-major 3x3 rotation then "
            "translation"
        )
    r = np.array(vals[:9]).reshape(3, 3)
    return CameraPose(rotation=Rotation3(r), translation=np.array(vals[9:]))


def _resolve_plane(cfg: dict, obs) -> Plane:
    if "plane" in cfg:
        vals = [float(t) for t in cfg["plane"].split()]
        if len(vals) != 4:
            raise FormatError("plane must be 'nx ny nz d'")
        n = np.asarray(vals[:3])
        n_norm = np.linalg.norm(n)
        plane = Plane(normal=n / n_norm, offset=vals[3] / n_norm)
    elif "plane_points" in cfg:
        pts = ingest.load_points(cfg["plane_points"])
        plane, _ = fit_plane_ransac(
            pts,
            inlier_threshold=float(cfg.get("plane_ransac_threshold", 0.01)),
            iterations=int(cfg.get("plane_ransac_iterations", 256)),
            seed=int(cfg.get("plane_ransac_seed", 0)),
        )
    else:
        raise FormatError(
            "config needs 'plane = nx ny nz d' or 'plane_points = <file>'"
        )
    return plane.oriented_toward(obs.pose.translation)


def _build_provider(spec_text: str, tc: trainer.TrainConfig):
    if spec_text == "none":
        return None
    if spec_text.startswith("mock:"):
        views = guidance.load_reference_views(spec_text[len("mock:"):])
        schedule = guidance.make_schedule(
            tc.schedule_T, tc.schedule_beta_start, tc.schedule_beta_end
        )
        return guidance.mock_guidance(views, schedule)
    if spec_text.startswith("remote:"):
        url = os.environ.get(GUIDANCE_URL_ENV) or spec_text[len("remote:"):]
        schedule = guidance.make_schedule(
            tc.schedule_T, tc.schedule_beta_start, tc.schedule_beta_end
        )
        return guidance.remote_guidance(url, schedule)
    raise FormatError(
        f"unknown guidance spec {spec_text!r}; use mock:<dir>, "
        "remote:<url>, or none"
    )


def cmd_complete(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    tc = _build_train_config(cfg, args)

    pose = (
        _parse_pose(cfg["pose"])
        if "pose" in cfg
        else CameraPose(
            rotation=Rotation3.identity(), translation=np.zeros(3)
        )
    )

    if tc.dataset_kind == "lidar":
        if args.points is None:
            print("error: --points is required for lidar data", file=sys.stderr)
            return 2
        pts = ingest.load_points(args.points)
        obs = ingest.lidar_to_observation(
            pts, vertical_fov_deg=float(cfg.get("lidar_vertical_fov", 26.8))
        )
    else:
        depth_path = args.depth or cfg.get("depth")
        mask_path = cfg.get("mask")
        intr_path = cfg.get("intrinsics")
        if not (depth_path and mask_path and intr_path):
            print(
                "error: depth-camera data needs --depth plus 'mask' and "
                "'intrinsics' config entries",
                file=sys.stderr,
            )
            return 2
        obs = ingest.depth_to_observation(
            ingest.load_depth_png(depth_path),
            ingest.load_mask_png(mask_path),
            ingest.load_intrinsics(intr_path),
            pose,
        )
        if args.points is not None:
            file_pts = ingest.load_points(args.points)
            if file_pts.shape[0] != obs.points.shape[0]:
                warnings.warn(
                    "point file disagrees with depth-derived points "
                    f"({file_pts.shape[0]} vs {obs.points.shape[0]}); "
                    "using the depth image",
                    RuntimeWarning,
                )

    obs.plane = _resolve_plane(cfg, obs)
    transform, obs = ingest.normalize_observation(obs)
    provider = _build_provider(args.guidance, tc)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = trainer.train(tc, obs, provider, out_dir=out_dir)

    meta = {
        "seed": tc.seed,
        "prompt": tc.prompt,
        "dataset_kind": tc.dataset_kind,
        "normalization": {
            "shift": transform.shift.tolist(),
            "scale": transform.scale,
        },
        "mesh": result.mesh_path,
        "checkpoints": result.checkpoint_paths,
        "loss_log": result.loss_log_path,
        "final_losses": {
            "point": result.history[-1][2].point,
            "mask": result.history[-1][2].mask,
            "depth": result.history[-1][2].depth,
            "eikonal": result.history[-1][2].eikonal,
            "plane": result.history[-1][2].plane,
            "total": result.history[-1][2].total,
        },
    }
    with open(out_dir / "run.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"mesh: {result.mesh_path}")
    print(f"checkpoint: {result.checkpoint_paths[-1]}")
    return 0


def _load_eval_points(path, samples, seed):
    mesh = None
    with open(path, "rb") as fh:
        is_ply = fh.read(3) == b"ply"
    if is_ply:
        mesh = evalx.load_mesh_ply(path)
        if mesh.is_empty:
            return mesh.vertices, "points"
        return evalx.sample_mesh(mesh, samples, seed=seed), "mesh"
    return ingest.load_points(path), "points"


def cmd_eval(args) -> int:
    pred, pred_kind = _load_eval_points(args.pred, args.samples, args.seed)
    gt, gt_kind = _load_eval_points(args.gt, args.samples, args.seed + 1)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        print("error: empty point set", file=sys.stderr)
        return 2

    icp_info = None
    if args.icp:
        from .geometry import RigidTransform

        init_t = RigidTransform.identity()
        if args.init:
            vals = [float(t) for t in args.init.split()]
            init_t = RigidTransform(
                rotation=Rotation3(np.array(vals[:9]).reshape(3, 3)),
                translation=np.array(vals[9:12]),
            )
        transform, converged, rms = evalx.icp_align(
            pred, gt, init=init_t, max_iters=args.icp_iters
        )
        pred = transform.apply(pred)
        icp_info = {"converged": bool(converged), "rms": rms}

    value = evalx.chamfer_mm(pred, gt)
    print(f"chamfer_mm {value:.6f}")
    record = {
        "chamfer_mm": value,
        "pred": str(args.pred),
        "gt": str(args.gt),
        "pred_kind": pred_kind,
        "gt_kind": gt_kind,
        "samples": args.samples,
        "seed": args.seed,
        "icp": icp_info,
    }
    print(json.dumps(record))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointfill",
        description="Point cloud completion by test-time optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    comp = sub.add_parser(
        "complete", help="optimize a surface completion from sensor data"
    )
    comp.add_argument("--config", help="key = value config file")
    comp.add_argument("--points", help="segmented point cloud (PLY or XYZ)")
    comp.add_argument("--depth", help="16-bit depth PNG in millimeters")
    comp.add_argument("--prompt", help="text description of the object")
    comp.add_argument(
        "--guidance",
        default="none",
        help="mock:<dir> | remote:<url> | none",
    )
    comp.add_argument("--seed", type=int, help="run seed")
    comp.add_argument("--out", required=True, help="output directory")
    comp.set_defaults(func=cmd_complete)

    ev = sub.add_parser(
        "eval", help="Chamfer-evaluate a predicted mesh against ground truth"
    )
    ev.add_argument("--pred", required=True, help="predicted mesh/points")
    ev.add_argument("--gt", required=True, help="ground-truth mesh/points")
    ev.add_argument("--icp", action="store_true", help="refine with ICP")
    ev.add_argument("--icp-iters", type=int, default=50)
    ev.add_argument(
        "--init", help="12 numbers: row-major rotation + translation"
    )
    ev.add_argument("--samples", type=int, default=100000)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
