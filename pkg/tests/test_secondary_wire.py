"""Wire conformance between the remote client and the TypeScript guidance
service (frontend/). Skipped when the service has not been built, so the
rest of the suite never depends on it."""

import json
import shutil
import socket
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from pointfill import guidance
from pointfill.errors import ProtocolError
from pointfill.guidance import (
    GuidanceRequest,
    ReferenceView,
    encode_f32_b64,
    make_schedule,
    mock_guidance,
    remote_guidance,
    sds_gradient,
)

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
SERVER_JS = FRONTEND / "dist" / "index.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SERVER_JS.exists(),
    reason="guidance service not built (run npm install && npm run build "
    "in frontend/)",
)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ServiceProcess:
    def __init__(self, tmp_path: Path, stub_mode: str):
        self.port = _free_port()
        cfg = tmp_path / "service.cfg"
        cfg.write_text(
            "\n".join(
                [
                    "host = 127.0.0.1",
                    f"port = {self.port}",
                    f"stub_mode = {stub_mode}",
                    "model_id = conformance-test",
                ]
            )
        )
        self.proc = subprocess.Popen(
            ["node", str(SERVER_JS), str(cfg)],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        self.endpoint = f"http://127.0.0.1:{self.port}"
        deadline = time.time() + 10.0
        last = None
        while time.time() < deadline:
            try:
                guidance.check_health(self.endpoint, timeout=1.0)
                return
            except Exception as exc:  # noqa: BLE001 - retry until deadline
                last = exc
                time.sleep(0.1)
        self.stop()
        raise RuntimeError(f"service did not become healthy: {last}")

    def stop(self):
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
        return False


def _request(img, eps, t=500):
    return GuidanceRequest(
        image=img, prompt="a chair", view_suffix="front view", t=t,
        epsilon=eps,
    )


@pytest.fixture
def f32_images():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(8, 8, 3)).astype(np.float32).astype(np.float64)
    eps = rng.standard_normal((8, 8, 3)).astype(np.float32).astype(np.float64)
    target = rng.uniform(size=(8, 8, 3)).astype(np.float32).astype(np.float64)
    return img, eps, target


class TestB1WireConformance:
    def test_echo_epsilon_gives_zero_gradient(self, tmp_path, f32_images):
        img, eps, _ = f32_images
        schedule = make_schedule()
        with ServiceProcess(tmp_path, "echo-epsilon") as srv:
            provider = remote_guidance(srv.endpoint, schedule)
            out = sds_gradient(_request(img, eps, t=321), provider, schedule)
        worst = float(np.abs(out.grad).max())
        assert worst < 1e-12
        print(f"\n[B1] echo-epsilon: max |grad| = {worst:.2e} (all zero)")

    def test_target_image_matches_in_process_mock(self, tmp_path, f32_images):
        img, eps, target = f32_images
        schedule = make_schedule()
        target_file = tmp_path / "target.json"
        target_file.write_text(
            json.dumps(
                {
                    "height": 8,
                    "width": 8,
                    "rgb_b64": encode_f32_b64(target),
                }
            )
        )
        mock = mock_guidance(
            {"front view": ReferenceView(rgb=target)}, schedule
        )
        with ServiceProcess(tmp_path, f"target-image:{target_file}") as srv:
            provider = remote_guidance(srv.endpoint, schedule)
            worst = 0.0
            for t in (50, 400, 900):
                req = _request(img, eps, t=t)
                remote_out = sds_gradient(req, provider, schedule)
                mock_out = sds_gradient(req, mock, schedule)
                worst = max(
                    worst, float(np.abs(remote_out.grad - mock_out.grad).max())
                )
        assert worst < 1e-5
        print(
            f"\n[B1] PASS target-image conformance: client-observed gradient "
            f"matches in-process mock within {worst:.2e} (<1e-5)"
        )

    def test_health_reports_model_id(self, tmp_path):
        with ServiceProcess(tmp_path, "echo-epsilon") as srv:
            info = guidance.check_health(srv.endpoint)
        assert info["status"] == "ok"
        assert info["model_id"] == "conformance-test"


class TestB2SchemaRobustness:
    def test_malformed_request_is_protocol_error_with_field_name(
        self, tmp_path, f32_images
    ):
        import requests

        img, eps, _ = f32_images
        with ServiceProcess(tmp_path, "echo-epsilon") as srv:
            body = {
                "image_b64": encode_f32_b64(img),
                "height": 8,
                "width": 8,
                # prompt intentionally missing
                "view_suffix": "front view",
                "t": 10,
                "epsilon_b64": encode_f32_b64(eps),
                "guidance_scale": 100.0,
            }
            resp = requests.post(
                srv.endpoint + "/v1/sds_grad", json=body, timeout=5
            )
            assert resp.status_code == 400
            assert "prompt" in resp.json()["error"]

            schedule = make_schedule()
            provider = remote_guidance(srv.endpoint, schedule)
            bad = _request(img, eps, t=99999)
            bad.t = 99999  # out of the service's schedule range
            with pytest.raises((ProtocolError, ValueError)):
                sds_gradient(bad, provider, schedule)

    def test_oversize_image_is_413(self, tmp_path):
        import requests

        with ServiceProcess(tmp_path, "echo-epsilon") as srv:
            n = 600  # above the default 512*512 pixel budget
            body = {
                "image_b64": "",
                "height": n,
                "width": n,
                "prompt": "x",
                "view_suffix": "front view",
                "t": 10,
                "epsilon_b64": "",
                "guidance_scale": 1.0,
            }
            resp = requests.post(
                srv.endpoint + "/v1/sds_grad", json=body, timeout=5
            )
            assert resp.status_code == 413
        print("\n[B2] PASS schema robustness: 400 with field diagnostics, "
              "413 for oversize images")
