import json

import numpy as np
import pytest

from pointfill import evalx, guidance, ingest, renderer, synthetic
from pointfill.cli import main, parse_config_file
from pointfill.errors import FormatError
from pointfill.fields import DensityParams
from pointfill.geometry import look_at
from pointfill.synthetic import ray_sphere_first_hit, sphere_sdf


def _write_depth_fixture(tmp_path, grid=16):
    """A small single-camera sphere scan on disk: depth, mask, intrinsics,
    pose line, plane points."""
    radius = 0.5
    pose = look_at(np.array([0.0, -1.3, 1.3]))
    intr_n = grid
    fx = 18.0
    intr = ingest.CameraIntrinsics(
        fx=fx, fy=fx, cx=(intr_n - 1) / 2, cy=(intr_n - 1) / 2,
        width=intr_n, height=intr_n,
    )
    u, v = np.meshgrid(
        np.arange(intr_n, dtype=float), np.arange(intr_n, dtype=float)
    )
    d_cam = np.stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)],
        axis=-1,
    ).reshape(-1, 3)
    secant = np.linalg.norm(d_cam, axis=1)
    dirs = (d_cam / secant[:, None]) @ pose.rotation.matrix.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    hit, dist = ray_sphere_first_hit(origins, dirs, np.zeros(3), radius)
    z = np.zeros(intr_n * intr_n)
    z[hit] = dist[hit] / secant[hit]
    depth_mm = np.round(z * 1000).astype(np.uint16).reshape(intr_n, intr_n)
    mask = hit.reshape(intr_n, intr_n)

    ingest.save_depth_png_mm(tmp_path / "depth.png", depth_mm)
    ingest.save_mask_png(tmp_path / "mask.png", mask)
    ingest.save_intrinsics(tmp_path / "intr.txt", intr)
    pose_line = " ".join(
        f"{x:.17g}" for x in list(pose.rotation.matrix.reshape(-1))
        + list(pose.translation)
    )
    rng = np.random.default_rng(0)
    ground = rng.uniform(-1.5, 1.5, size=(200, 3))
    ground[:, 2] = -radius
    ingest.save_points_ply(tmp_path / "ground.ply", ground)
    return pose_line


class TestConfigParsing:
    def test_parse(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("# comment\nepochs = 3\nprompt = a chair  \n")
        cfg = parse_config_file(p)
        assert cfg == {"epochs": "3", "prompt": "a chair"}

    def test_malformed(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("epochs 3\n")
        with pytest.raises(FormatError):
            parse_config_file(p)


class TestCompleteCommand:
    def test_end_to_end_mock_guidance(self, tmp_path, capsys):
        pose_line = _write_depth_fixture(tmp_path)
        # reference views for the mock provider
        fx = synthetic.hemisphere_scan(grid=12, fx=15.0)
        dp = DensityParams()
        d = float(np.linalg.norm(fx.observation.pose.translation))
        samp = renderer.SamplingConfig(
            near=d - 1, far=d + 1, samples_per_ray=12, stratified=False
        )
        views = synthetic.sphere_reference_views(
            fx, dp, samp, n_azimuths=2, resolution=(12, 12)
        )
        guidance.save_reference_views(tmp_path / "refs", views)

        cfg = tmp_path / "cfg.txt"
        cfg.write_text(
            "\n".join(
                [
                    "epochs = 1",
                    "iterations_per_epoch = 3",
                    "render_resolution = 12 12",
                    "pixel_batch = 48",
                    "samples_per_ray = 12",
                    "mesh_resolution = 12",
                    "learning_rate = 0.001",
                    f"mask = {tmp_path / 'mask.png'}",
                    f"intrinsics = {tmp_path / 'intr.txt'}",
                    f"plane_points = {tmp_path / 'ground.ply'}",
                    f"pose = {pose_line}",
                ]
            )
        )
        rc = main(
            [
                "complete",
                "--config", str(cfg),
                "--depth", str(tmp_path / "depth.png"),
                "--prompt", "a sphere",
                "--guidance", f"mock:{tmp_path / 'refs'}",
                "--seed", "3",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "mesh:" in out
        assert (tmp_path / "out" / "mesh.ply").exists()
        assert (tmp_path / "out" / "checkpoint_final.pfck").exists()
        assert (tmp_path / "out" / "losses.csv").exists()
        run = json.loads((tmp_path / "out" / "run.json").read_text())
        assert run["seed"] == 3
        assert run["prompt"] == "a sphere"

    def test_missing_inputs_error(self, tmp_path, capsys):
        rc = main(
            [
                "complete",
                "--guidance", "none",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert rc == 2
        assert "depth-camera" in capsys.readouterr().err


class TestEvalCommand:
    def test_chamfer_output(self, tmp_path, capsys):
        mesh = evalx.marching_cubes(
            sphere_sdf(np.zeros(3), 0.3),
            (np.full(3, -0.5), np.full(3, 0.5)),
            24,
        )
        evalx.save_mesh_ply(tmp_path / "pred.ply", mesh)
        rng = np.random.default_rng(1)
        d = rng.normal(size=(2000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        ingest.save_points_ply(tmp_path / "gt.ply", 0.3 * d)

        rc = main(
            [
                "eval",
                "--pred", str(tmp_path / "pred.ply"),
                "--gt", str(tmp_path / "gt.ply"),
                "--samples", "2000",
                "--seed", "0",
            ]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("chamfer_mm ")
        value = float(lines[0].split()[1])
        assert value < 20.0  # sphere-vs-sphere, coarse grid
        record = json.loads(lines[1])
        assert record["chamfer_mm"] == pytest.approx(value, abs=1e-6)

    def test_icp_flag(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(300, 3))
        ingest.save_points_ply(tmp_path / "gt.ply", pts)
        ingest.save_points_ply(
            tmp_path / "pred.ply", pts + np.array([0.05, 0.0, 0.0])
        )
        rc = main(
            [
                "eval",
                "--pred", str(tmp_path / "pred.ply"),
                "--gt", str(tmp_path / "gt.ply"),
                "--icp",
                "--samples", "300",
            ]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        record = json.loads(lines[1])
        assert record["icp"]["converged"]
        assert record["chamfer_mm"] < 1.0


class TestCompleteLidar:
    def test_lidar_pipeline(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        n = 600
        pts = np.stack(
            [
                rng.uniform(7.6, 8.4, n),
                rng.uniform(-0.5, 0.5, n),
                rng.uniform(-1.2, 0.2, n),
            ],
            axis=1,
        )
        ingest.save_points_ply(tmp_path / "scan.ply", pts)
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(
            "\n".join(
                [
                    "dataset_kind = lidar",
                    "epochs = 1",
                    "iterations_per_epoch = 2",
                    "samples_per_ray = 8",
                    "mesh_resolution = 8",
                    "aux_samples = 32",
                    "plane = 0 0 1 1.25",
                ]
            )
        )
        rc = main(
            [
                "complete",
                "--config", str(cfg),
                "--points", str(tmp_path / "scan.ply"),
                "--prompt", "a box",
                "--guidance", "none",
                "--seed", "1",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert rc == 0
        assert (tmp_path / "out" / "mesh.ply").exists()
