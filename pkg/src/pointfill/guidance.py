"""Score-distillation machinery.

A guidance provider predicts the noise ``eps_hat`` that a frozen denoising
diffusion model sees in a noised render; ``sds_gradient`` turns that into a
per-pixel gradient ``w(t) * (eps_hat - eps)`` on the rendered image, where
``w(t) = 1 - alpha_bar(t)``. No gradient flows through the provider itself.

Providers:

* ``MockGuidance`` - deterministic, pulls renders toward stored reference
  views; exact zero gradient when the render equals the reference.
* ``RemoteGuidance`` - HTTP client for a guidance service speaking the
  JSON/base64-float32 wire protocol (POST /v1/sds_grad, GET /v1/health).
"""

from __future__ import annotations

import base64
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GuidanceUnavailableError, ProtocolError

DEFAULT_T = 1000
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process schedule; ``alpha_bars`` is the running product of
    ``1 - beta`` and is strictly decreasing in (0, 1)."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a nonempty vector")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "_alpha_bars", np.cumprod(1.0 - b))

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return self._alpha_bars

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at 1-based timestep t."""
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return float(self._alpha_bars[t - 1])

    def sds_weight(self, t: int) -> float:
        """w(t) = 1 - alpha_bar(t); bounded in (0, 1), largest at high
        noise."""
        return 1.0 - self.alpha_bar(t)


def make_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear beta schedule with a running-product alpha_bar."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(betas=np.linspace(beta_start, beta_end, T))


def add_noise(image, eps, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Noised image ``sqrt(ab) I + sqrt(1 - ab) eps`` at timestep t."""
    img = np.asarray(image, dtype=np.float64)
    e = np.asarray(eps, dtype=np.float64)
    if img.shape != e.shape:
        raise ValueError(
            f"image shape {img.shape} and noise shape {e.shape} differ"
        )
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * img + np.sqrt(1.0 - ab) * e


def sample_timestep(
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    lo_frac: float = 0.02,
    hi_frac: float = 0.98,
) -> int:
    """Uniform timestep over the middle of the schedule."""
    lo = max(1, int(round(lo_frac * schedule.T)))
    hi = min(schedule.T, int(round(hi_frac * schedule.T)))
    return int(rng.integers(lo, hi + 1))


@dataclass
class GuidanceRequest:
    """A rendered image plus everything a provider needs to score it."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    prompt: str
    view_suffix: str
    t: int
    epsilon: np.ndarray  # (H, W, 3) standard normal
    guidance_scale: float = 100.0
    azimuth_deg: float | None = None
    elevation_deg: float | None = None
    bg_color: np.ndarray | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.epsilon = np.asarray(self.epsilon, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("image must be (H, W, 3)")
        if self.epsilon.shape != self.image.shape:
            raise ValueError("epsilon must match the image shape")
        if not np.all(np.isfinite(self.image)):
            raise ValueError("image must be finite")
        if self.bg_color is not None:
            self.bg_color = np.asarray(self.bg_color, dtype=np.float64)

    @property
    def full_prompt(self) -> str:
        return f"{self.prompt}, {self.view_suffix}"


@dataclass(frozen=True)
class GuidanceGradient:
    """Per-pixel gradient of the distillation objective on the image."""

    grad: np.ndarray
    provider_id: str = ""


def sds_gradient(
    request: GuidanceRequest, provider, schedule: NoiseSchedule
) -> GuidanceGradient:
    """Noise the image, query the provider for ``eps_hat``, and return
    ``w(t) * (eps_hat - eps)``. Provider failures propagate as
    GuidanceUnavailableError."""
    noised = add_noise(request.image, request.epsilon, request.t, schedule)
    eps_hat = provider.predict_noise(noised, request)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != request.image.shape:
        raise ProtocolError(
            f"provider returned shape {eps_hat.shape}, expected "
            f"{request.image.shape}"
        )
    grad = schedule.sds_weight(request.t) * (eps_hat - request.epsilon)
    if not np.all(np.isfinite(grad)):
        raise ProtocolError("provider returned non-finite values")
    return GuidanceGradient(
        grad=grad, provider_id=getattr(provider, "provider_id", "")
    )


# ---------------------------------------------------------------------------
# Mock provider


@dataclass
class ReferenceView:
    """A target view: foreground color (background not composited) plus
    per-pixel opacity, keyed by azimuth or by an arbitrary string."""

    rgb: np.ndarray  # (H, W, 3)
    opacity: np.ndarray | None = None  # (H, W)
    azimuth_deg: float | None = None


class MockGuidance:
    """Deterministic stand-in for a pretrained text-to-image model.

    For the reference view ``I*`` matching the request, predicts
    ``eps_hat = (I_t - sqrt(ab) I*) / sqrt(1 - ab)``, which makes the SDS
    gradient proportional to ``I_0 - I*``: the render is pulled toward the
    reference. When references carry opacity, the request's background color
    is composited behind them so backgrounds never fight the geometry.
    """

    provider_id = "mock"

    def __init__(self, targets: dict, schedule: NoiseSchedule):
        if not targets:
            raise ValueError("mock guidance needs at least one reference")
        self._targets = dict(targets)
        self._schedule = schedule
        self._by_azimuth = [
            (key, ref.azimuth_deg)
            for key, ref in self._targets.items()
            if ref.azimuth_deg is not None
        ]

    def _resolve(self, request: GuidanceRequest) -> ReferenceView:
        if request.azimuth_deg is not None and self._by_azimuth:
            def circ_dist(a, b):
                d = abs(a - b) % 360.0
                return min(d, 360.0 - d)

            key, _ = min(
                self._by_azimuth,
                key=lambda ka: circ_dist(ka[1], request.azimuth_deg),
            )
            return self._targets[key]
        if request.view_suffix in self._targets:
            return self._targets[request.view_suffix]
        raise GuidanceUnavailableError(
            f"no reference view for suffix {request.view_suffix!r} / "
            f"azimuth {request.azimuth_deg!r}"
        )

    def _target_image(self, ref: ReferenceView, request) -> np.ndarray:
        rgb = ref.rgb
        if ref.opacity is not None and request.bg_color is not None:
            rgb = rgb + (1.0 - ref.opacity)[:, :, None] * request.bg_color
        if rgb.shape != request.image.shape:
            raise GuidanceUnavailableError(
                f"reference shape {rgb.shape} does not match render "
                f"{request.image.shape}"
            )
        return rgb

    def predict_noise(self, noised, request: GuidanceRequest) -> np.ndarray:
        ref = self._resolve(request)
        target = self._target_image(ref, request)
        ab = self._schedule.alpha_bar(request.t)
        return (noised - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)


def mock_guidance(targets: dict, schedule: NoiseSchedule) -> MockGuidance:
    """Build the deterministic mock provider from view-keyed references."""
    return MockGuidance(targets, schedule)


def save_reference_views(directory, views: dict) -> None:
    """Persist reference views as one .npz per key."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for key, ref in views.items():
        payload = {"rgb": ref.rgb}
        if ref.opacity is not None:
            payload["opacity"] = ref.opacity
        if ref.azimuth_deg is not None:
            payload["azimuth_deg"] = np.float64(ref.azimuth_deg)
        np.savez(d / f"{key}.npz", **payload)


def load_reference_views(directory) -> dict:
    """Load every .npz reference view in a directory, keyed by filename."""
    d = Path(directory)
    views = {}
    for path in sorted(d.glob("*.npz")):
        with np.load(path) as data:
            views[path.stem] = ReferenceView(
                rgb=np.asarray(data["rgb"], dtype=np.float64),
                opacity=(
                    np.asarray(data["opacity"], dtype=np.float64)
                    if "opacity" in data
                    else None
                ),
                azimuth_deg=(
                    float(data["azimuth_deg"])
                    if "azimuth_deg" in data
                    else None
                ),
            )
    if not views:
        raise GuidanceUnavailableError(f"no reference views in {directory}")
    return views


# ---------------------------------------------------------------------------
# Wire codec (shared with the stub server and the conformance tests)


def encode_f32_b64(arr: np.ndarray) -> str:
    """Base64 of row-major little-endian float32 data."""
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
    ).decode("ascii")


def decode_f32_b64(data: str, shape: tuple) -> np.ndarray:
    raw = base64.b64decode(data, validate=True)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ValueError(
            f"payload holds {len(raw)} bytes, expected {expected}"
        )
    return (
        np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    )


# ---------------------------------------------------------------------------
# Remote provider


@dataclass
class RemoteConfig:
    endpoint: str
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    max_image_pixels: int = 512 * 512
    max_in_flight: int = 4


class RemoteGuidance:
    """HTTP client for the guidance service.

    POSTs the clean render, noise sample, timestep, and prompt; the service
    returns the full SDS gradient, from which the provider reconstructs
    ``eps_hat = eps + grad / w(t)`` so it composes with ``sds_gradient``
    exactly like any other provider. Connection failures retry with
    exponential backoff, then raise GuidanceUnavailableError; schema
    violations raise ProtocolError.
    """

    def __init__(self, config: RemoteConfig, schedule: NoiseSchedule):
        import threading

        import requests

        self._config = config
        self._schedule = schedule
        self._session = requests.Session()
        self._gate = threading.Semaphore(max(1, config.max_in_flight))
        self.provider_id = config.endpoint

    def _post(self, body: dict) -> dict:
        import requests

        url = self._config.endpoint.rstrip("/") + "/v1/sds_grad"
        last_exc = None
        for attempt in range(self._config.max_retries + 1):
            if attempt:
                time.sleep(self._config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    url, json=body, timeout=self._config.timeout
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if 400 <= resp.status_code < 500:
                raise ProtocolError(
                    f"service rejected request ({resp.status_code}): "
                    f"{resp.text[:500]}"
                )
            if resp.status_code != 200:
                last_exc = RuntimeError(
                    f"service error {resp.status_code}: {resp.text[:200]}"
                )
                continue
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(
                    f"service returned a non-JSON body: {exc}"
                ) from exc
        raise GuidanceUnavailableError(
            f"guidance endpoint {url} unreachable after "
            f"{self._config.max_retries + 1} attempts: {last_exc}"
        )

    def predict_noise(self, noised, request: GuidanceRequest) -> np.ndarray:
        h, w, _ = request.image.shape
        if h * w > self._config.max_image_pixels:
            raise ValueError(
                f"image has {h * w} pixels, client limit is "
                f"{self._config.max_image_pixels}"
            )
        body = {
            "image_b64": encode_f32_b64(request.image),
            "height": h,
            "width": w,
            "prompt": request.prompt,
            "view_suffix": request.view_suffix,
            "t": int(request.t),
            "epsilon_b64": encode_f32_b64(request.epsilon),
            "guidance_scale": float(request.guidance_scale),
        }
        with self._gate:
            payload = self._post(body)
        if "grad_b64" not in payload:
            raise ProtocolError("response is missing grad_b64")
        try:
            grad = decode_f32_b64(payload["grad_b64"], request.image.shape)
        except ValueError as exc:
            raise ProtocolError(f"bad gradient payload: {exc}") from exc
        weight = self._schedule.sds_weight(request.t)
        return request.epsilon + grad / weight


def remote_guidance(
    endpoint: str,
    schedule: NoiseSchedule | None = None,
    **kwargs,
) -> RemoteGuidance:
    """Build the remote provider; extra kwargs go to RemoteConfig."""
    return RemoteGuidance(
        RemoteConfig(endpoint=endpoint, **kwargs),
        schedule or make_schedule(),
    )


def check_health(endpoint: str, timeout: float = 5.0) -> dict:
    """GET /v1/health; raises GuidanceUnavailableError when unreachable or
    not ready."""
    import requests

    url = endpoint.rstrip("/") + "/v1/health"
    try:
        resp = requests.get(url, timeout=timeout)
    except requests.RequestException as exc:
        raise GuidanceUnavailableError(f"health check failed: {exc}") from exc
    if resp.status_code != 200:
        raise GuidanceUnavailableError(
            f"service not ready ({resp.status_code})"
        )
    try:
        return resp.json()
    except ValueError as exc:
        raise ProtocolError("health response is not JSON") from exc
