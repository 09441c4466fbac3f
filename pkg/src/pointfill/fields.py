"""Neural fields: positional encoding, the SDF and color MLPs, geometric
sphere initialization, and the SDF-to-density conversion.

Both networks are plain numpy, double precision, with hand-written
reverse-mode backward passes. The SDF net is 4 linear layers of ``hidden``
channels with ReLU; the color net is 4 linear layers with SiLU where the two
middle layers form one residual block ``y = x + L3(silu(L2(x)))`` and the
output is squashed by a sigmoid.

Gradient support comes in three flavors:

* ``mlp_backward`` - exact vector-Jacobian product through either net,
  returning parameter gradients and, optionally, input gradients.
* ``sdf_eval`` - value plus spatial gradient of the SDF.
* ``spatial_grad_forward/backward`` - the spatial gradient as a
  differentiable quantity, so losses on ``grad f`` can be backpropagated to
  the parameters (ReLU masks are piecewise constant, so they are held fixed
  in this second-order pass).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

_CHECKPOINT_MAGIC = b"PFLDCKPT"
_CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Positional encoding


@dataclass(frozen=True)
class EncodingConfig:
    """Sinusoidal encoding with ``levels`` octaves, optionally keeping the
    raw coordinates. Output dimension is 3*include_input + 6*levels."""

    levels: int = 6
    include_input: bool = True

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("levels must be >= 0")

    @property
    def out_dim(self) -> int:
        return 3 * (1 if self.include_input else 0) + 6 * self.levels


def positional_encoding(x, cfg: EncodingConfig) -> np.ndarray:
    """Encode ``x`` as ``[x, sin(2^0 x), cos(2^0 x), ..., cos(2^(L-1) x)]``
    applied coordinate-wise. Accepts (3,) or (B, 3)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    feats = _encode(pts, cfg)
    return feats[0] if single else feats


def _encode(pts: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    parts = []
    if cfg.include_input:
        parts.append(pts)
    for k in range(cfg.levels):
        scaled = pts * (2.0**k)
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    if not parts:
        return np.zeros((pts.shape[0], 0))
    return np.concatenate(parts, axis=1)


def _encode_dfactors(pts: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """d(feature_j)/d(x_{coord(j)}), laid out exactly like the features."""
    parts = []
    if cfg.include_input:
        parts.append(np.ones_like(pts))
    for k in range(cfg.levels):
        f = 2.0**k
        scaled = pts * f
        parts.append(f * np.cos(scaled))
        parts.append(-f * np.sin(scaled))
    if not parts:
        return np.zeros((pts.shape[0], 0))
    return np.concatenate(parts, axis=1)


def _collapse_feature_grad(dfeat_times_dfact: np.ndarray) -> np.ndarray:
    """Sum per-feature gradients back onto the 3 coordinates."""
    b, d = dfeat_times_dfact.shape
    return dfeat_times_dfact.reshape(b, d // 3, 3).sum(axis=1)


def _expand_coord_grad(dg: np.ndarray, d: int) -> np.ndarray:
    """Broadcast a (B, 3) coordinate gradient onto d features."""
    b = dg.shape[0]
    return np.tile(dg, (1, d // 3))


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class FieldParams:
    """Weights of the SDF net and the color net, plus the encoding config.

    Weight matrices are (out, in); the layer map is ``z = h @ W.T + b``.
    """

    encoding: EncodingConfig
    sdf_weights: list
    sdf_biases: list
    color_weights: list
    color_biases: list

    def __post_init__(self):
        self.sdf_weights = [np.asarray(w, dtype=np.float64) for w in self.sdf_weights]
        self.sdf_biases = [np.asarray(b, dtype=np.float64) for b in self.sdf_biases]
        self.color_weights = [np.asarray(w, dtype=np.float64) for w in self.color_weights]
        self.color_biases = [np.asarray(b, dtype=np.float64) for b in self.color_biases]
        self._check_chain(self.sdf_weights, self.sdf_biases, 1, "sdf")
        self._check_chain(self.color_weights, self.color_biases, 3, "color")
        if self.color_weights[0].shape[0] != self.color_weights[2].shape[0]:
            raise ValueError(
                "color residual block needs matching widths for the first "
                "and third layers"
            )

    def _check_chain(self, weights, biases, out_dim, name):
        if len(weights) != 4 or len(biases) != 4:
            raise ValueError(f"{name} net must have exactly 4 linear layers")
        d = self.encoding.out_dim
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"{name} layer {i} weight/bias mismatch")
            if w.shape[1] != d:
                raise ValueError(
                    f"{name} layer {i} expects input dim {w.shape[1]}, "
                    f"chain provides {d}"
                )
            d = w.shape[0]
        if d != out_dim:
            raise ValueError(f"{name} net output dim {d}, expected {out_dim}")

    @property
    def hidden(self) -> int:
        return self.sdf_weights[0].shape[0]

    def arrays(self) -> list:
        """All parameter arrays in a fixed canonical order."""
        out = []
        for w, b in zip(self.sdf_weights, self.sdf_biases):
            out += [w, b]
        for w, b in zip(self.color_weights, self.color_biases):
            out += [w, b]
        return out

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "FieldParams":
        return FieldParams(
            encoding=self.encoding,
            sdf_weights=[w.copy() for w in self.sdf_weights],
            sdf_biases=[b.copy() for b in self.sdf_biases],
            color_weights=[w.copy() for w in self.color_weights],
            color_biases=[b.copy() for b in self.color_biases],
        )


@dataclass
class FieldGrads:
    """Gradient container mirroring FieldParams' array layout."""

    sdf_weights: list
    sdf_biases: list
    color_weights: list
    color_biases: list

    @classmethod
    def zeros_like(cls, params: FieldParams) -> "FieldGrads":
        return cls(
            sdf_weights=[np.zeros_like(w) for w in params.sdf_weights],
            sdf_biases=[np.zeros_like(b) for b in params.sdf_biases],
            color_weights=[np.zeros_like(w) for w in params.color_weights],
            color_biases=[np.zeros_like(b) for b in params.color_biases],
        )

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.sdf_weights, self.sdf_biases):
            out += [w, b]
        for w, b in zip(self.color_weights, self.color_biases):
            out += [w, b]
        return out

    def add_scaled(self, other: "FieldGrads", scale: float = 1.0) -> None:
        for a, b in zip(self.arrays(), other.arrays()):
            a += scale * b

    def scale(self, c: float) -> None:
        for a in self.arrays():
            a *= c

    def global_norm(self) -> float:
        return float(
            np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays()))
        )

    def clip_global_norm(self, max_norm: float) -> float:
        """Scale all gradients so the global norm is at most ``max_norm``.
        Returns the pre-clip norm."""
        norm = self.global_norm()
        if norm > max_norm > 0:
            self.scale(max_norm / norm)
        return norm


# ---------------------------------------------------------------------------
# Activations


# Sigmoid saturates to 1.0 (resp. 0.0) in float64 beyond |z| ~ 37, so the
# argument is clamped at 40: results are bit-identical and the exp never
# reaches the denormal range, which is an order of magnitude slower.
_SIGMOID_CLAMP = 40.0


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)))


def _silu(z):
    return z * _sigmoid(z)


def _silu_prime_from(z, s):
    """SiLU derivative from the pre-activation and its cached sigmoid."""
    return s * (1.0 + z * (1.0 - s))


# ---------------------------------------------------------------------------
# Forward / backward passes


@dataclass
class SDFCache:
    """Activations needed to backprop through the SDF net."""

    params: FieldParams
    x: np.ndarray
    feat: np.ndarray
    hs: list  # post-ReLU hidden activations h1, h2, h3
    f: np.ndarray


@dataclass
class ColorCache:
    """Activations needed to backprop through the color net."""

    params: FieldParams
    x: np.ndarray
    feat: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    s0: np.ndarray  # sigmoid(t0), cached to avoid a second exp pass
    s1: np.ndarray
    h: np.ndarray  # residual block output (skip + branch)
    rgb: np.ndarray


def sdf_forward(
    params: FieldParams, x, feat: np.ndarray | None = None
) -> tuple[np.ndarray, SDFCache]:
    """SDF values for (B, 3) points, with a cache for backward. ``feat``
    may pass in a precomputed encoding of the same points."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if feat is None:
        feat = _encode(pts, params.encoding)
    ws, bs = params.sdf_weights, params.sdf_biases
    h1 = np.maximum(feat @ ws[0].T + bs[0], 0.0)
    h2 = np.maximum(h1 @ ws[1].T + bs[1], 0.0)
    h3 = np.maximum(h2 @ ws[2].T + bs[2], 0.0)
    f = (h3 @ ws[3].T + bs[3])[:, 0]
    return f, SDFCache(params=params, x=pts, feat=feat, hs=[h1, h2, h3], f=f)


def color_forward(
    params: FieldParams, x, feat: np.ndarray | None = None
) -> tuple[np.ndarray, ColorCache]:
    """Color values in [0,1]^3 for (B, 3) points, with a backward cache."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if feat is None:
        feat = _encode(pts, params.encoding)
    ws, bs = params.color_weights, params.color_biases
    t0 = feat @ ws[0].T + bs[0]
    s0 = _sigmoid(t0)
    a0 = t0 * s0
    t1 = a0 @ ws[1].T + bs[1]
    s1 = _sigmoid(t1)
    a1 = t1 * s1
    t2 = a1 @ ws[2].T + bs[2]
    h = a0 + t2
    t3 = h @ ws[3].T + bs[3]
    rgb = _sigmoid(t3)
    return rgb, ColorCache(
        params=params, x=pts, feat=feat, t0=t0, t1=t1, s0=s0, s1=s1,
        h=h, rgb=rgb,
    )


def mlp_backward(
    cache,
    dout: np.ndarray,
    need_param_grads: bool = True,
    need_dx: bool = False,
) -> tuple[FieldGrads | None, np.ndarray | None]:
    """Reverse-mode pass through either net.

    ``dout`` is the gradient of a scalar objective with respect to the net
    output: shape (B,) or (B, 1) for the SDF net, (B, 3) for the color net.
    Returns (parameter gradients, input gradient); each may be None when not
    requested. Raises ValueError on shape mismatch with the cached forward.
    """
    if isinstance(cache, SDFCache):
        return _sdf_backward(cache, dout, need_param_grads, need_dx)
    if isinstance(cache, ColorCache):
        return _color_backward(cache, dout, need_param_grads, need_dx)
    raise TypeError(f"unsupported cache type: {type(cache).__name__}")


def _sdf_backward(cache: SDFCache, df, need_param_grads, need_dx):
    params = cache.params
    df = np.asarray(df, dtype=np.float64)
    if df.ndim == 2 and df.shape[1] == 1:
        df = df[:, 0]
    if df.shape != cache.f.shape:
        raise ValueError(
            f"output gradient shape {df.shape} does not match forward "
            f"output {cache.f.shape}"
        )
    ws = params.sdf_weights
    h1, h2, h3 = cache.hs
    grads = FieldGrads.zeros_like(params) if need_param_grads else None

    dz4 = df[:, None]  # (B, 1)
    if need_param_grads:
        np.matmul(dz4.T, h3, out=grads.sdf_weights[3])
        grads.sdf_biases[3][:] = dz4.sum(axis=0)
    dz3 = dz4 @ ws[3]
    np.multiply(dz3, h3 > 0, out=dz3)
    if need_param_grads:
        np.matmul(dz3.T, h2, out=grads.sdf_weights[2])
        grads.sdf_biases[2][:] = dz3.sum(axis=0)
    dz2 = dz3 @ ws[2]
    np.multiply(dz2, h2 > 0, out=dz2)
    if need_param_grads:
        np.matmul(dz2.T, h1, out=grads.sdf_weights[1])
        grads.sdf_biases[1][:] = dz2.sum(axis=0)
    dz1 = dz2 @ ws[1]
    np.multiply(dz1, h1 > 0, out=dz1)
    if need_param_grads:
        np.matmul(dz1.T, cache.feat, out=grads.sdf_weights[0])
        grads.sdf_biases[0][:] = dz1.sum(axis=0)

    dx = None
    if need_dx:
        dfeat = dz1 @ ws[0]
        dfact = _encode_dfactors(cache.x, params.encoding)
        dx = _collapse_feature_grad(dfeat * dfact)
    return grads, dx


def _color_backward(cache: ColorCache, drgb, need_param_grads, need_dx):
    params = cache.params
    drgb = np.asarray(drgb, dtype=np.float64)
    if drgb.shape != cache.rgb.shape:
        raise ValueError(
            f"output gradient shape {drgb.shape} does not match forward "
            f"output {cache.rgb.shape}"
        )
    ws = params.color_weights
    a0 = cache.t0 * cache.s0
    a1 = cache.t1 * cache.s1
    grads = FieldGrads.zeros_like(params) if need_param_grads else None

    dt3 = drgb * cache.rgb * (1.0 - cache.rgb)
    if need_param_grads:
        np.matmul(dt3.T, cache.h, out=grads.color_weights[3])
        grads.color_biases[3][:] = dt3.sum(axis=0)
    dh = dt3 @ ws[3]
    dt2 = dh  # branch side of the residual
    if need_param_grads:
        np.matmul(dt2.T, a1, out=grads.color_weights[2])
        grads.color_biases[2][:] = dt2.sum(axis=0)
    dt1 = dt2 @ ws[2]
    np.multiply(dt1, _silu_prime_from(cache.t1, cache.s1), out=dt1)
    if need_param_grads:
        np.matmul(dt1.T, a0, out=grads.color_weights[1])
        grads.color_biases[1][:] = dt1.sum(axis=0)
    dt0 = dt1 @ ws[1] + dh  # skip side of the residual
    np.multiply(dt0, _silu_prime_from(cache.t0, cache.s0), out=dt0)
    if need_param_grads:
        np.matmul(dt0.T, cache.feat, out=grads.color_weights[0])
        grads.color_biases[0][:] = dt0.sum(axis=0)

    dx = None
    if need_dx:
        dfeat = dt0 @ ws[0]
        dfact = _encode_dfactors(cache.x, params.encoding)
        dx = _collapse_feature_grad(dfeat * dfact)
    return grads, dx


def sdf_eval(params: FieldParams, x) -> tuple[np.ndarray, np.ndarray]:
    """SDF value and exact spatial gradient. Accepts (3,) or (B, 3)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    f, cache = sdf_forward(params, arr)
    _, dx = mlp_backward(
        cache, np.ones_like(f), need_param_grads=False, need_dx=True
    )
    if single:
        return float(f[0]), dx[0]
    return f, dx


def color_eval(params: FieldParams, x) -> np.ndarray:
    """Color in [0,1]^3. Accepts (3,) or (B, 3)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    rgb, _ = color_forward(params, arr)
    return rgb[0] if single else rgb


# ---------------------------------------------------------------------------
# Differentiable spatial gradient (for the eikonal term)


@dataclass
class SpatialGradCache:
    cache: SDFCache
    dfact: np.ndarray
    masks: list
    rs: list  # reverse-chain activations r3, r2, r1


def spatial_grad_forward(
    params: FieldParams, x
) -> tuple[np.ndarray, SpatialGradCache]:
    """Spatial gradient of the SDF as a differentiable function of the
    parameters. Returns (g, cache) with g of shape (B, 3)."""
    _, cache = sdf_forward(params, x)
    ws = params.sdf_weights
    h1, h2, h3 = cache.hs
    m1, m2, m3 = (h1 > 0).astype(np.float64), (h2 > 0).astype(
        np.float64
    ), (h3 > 0).astype(np.float64)
    r3 = m3 * ws[3][0]  # (B, H)
    r2 = m2 * (r3 @ ws[2])
    r1 = m1 * (r2 @ ws[1])
    re = r1 @ ws[0]  # (B, De)
    dfact = _encode_dfactors(cache.x, params.encoding)
    g = _collapse_feature_grad(re * dfact)
    return g, SpatialGradCache(
        cache=cache, dfact=dfact, masks=[m1, m2, m3], rs=[r3, r2, r1]
    )


def spatial_grad_backward(
    sg: SpatialGradCache, dg: np.ndarray
) -> FieldGrads:
    """Parameter gradients of a scalar objective whose gradient with respect
    to the spatial gradient is ``dg`` (B, 3). ReLU masks are treated as
    constants (they are, almost everywhere)."""
    params = sg.cache.params
    ws = params.sdf_weights
    m1, m2, m3 = sg.masks
    r3, r2, r1 = sg.rs
    dg = np.asarray(dg, dtype=np.float64)
    grads = FieldGrads.zeros_like(params)

    d_re = _expand_coord_grad(dg, sg.dfact.shape[1]) * sg.dfact
    grads.sdf_weights[0][:] = r1.T @ d_re
    d_r1 = (d_re @ ws[0].T) * m1
    grads.sdf_weights[1][:] = r2.T @ d_r1
    d_r2 = (d_r1 @ ws[1].T) * m2
    grads.sdf_weights[2][:] = r3.T @ d_r2
    d_r3 = (d_r2 @ ws[2].T) * m3
    grads.sdf_weights[3][0, :] = d_r3.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Density


@dataclass(frozen=True)
class DensityParams:
    """Density scale ``alpha`` and Laplace scale ``beta`` (both fixed)."""

    alpha: float = 100.0
    beta: float = 1e-3

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


# exp arguments are floored at -708 (result ~3e-308, the smallest normal
# magnitude); anything lower would only produce slow denormals before
# vanishing entirely downstream.
_EXP_FLOOR = -708.0


def density_from_sdf(f, dp: DensityParams) -> np.ndarray:
    """VolSDF-style density ``alpha * Psi_beta(-f)`` where ``Psi_beta`` is
    the zero-mean Laplace CDF with scale beta. Strictly decreasing in f."""
    f = np.asarray(f, dtype=np.float64)
    s = -f
    half_tail = 0.5 * np.exp(np.maximum(-np.abs(s) / dp.beta, _EXP_FLOOR))
    return dp.alpha * np.where(s <= 0.0, half_tail, 1.0 - half_tail)


def density_slope_wrt_sdf(f, dp: DensityParams) -> np.ndarray:
    """d(density)/d(f) = -alpha/(2 beta) * exp(-|f|/beta)."""
    f = np.asarray(f, dtype=np.float64)
    return -(dp.alpha / (2.0 * dp.beta)) * np.exp(
        np.maximum(-np.abs(f) / dp.beta, _EXP_FLOOR)
    )


# ---------------------------------------------------------------------------
# Initialization


def sphere_init(
    cfg: EncodingConfig,
    radius: float,
    seed: int = 0,
    hidden: int = 96,
) -> FieldParams:
    """Initialize the SDF net to approximate ``|x| - radius`` (geometric
    initialization) and the color net with small random weights.

    The first SDF layer zeroes the columns that read the sinusoidal
    features, so at init the net sees only the raw coordinates; the final
    layer starts at a constant positive weight vector with bias ``-radius``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    de = cfg.out_dim

    sdf_w, sdf_b = [], []
    dims = [de, hidden, hidden, hidden, 1]
    for i in range(4):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == 3:
            w = rng.normal(
                loc=np.sqrt(np.pi) / np.sqrt(fan_in),
                scale=1e-4,
                size=(fan_out, fan_in),
            )
            b = np.full(fan_out, -float(radius))
        else:
            w = rng.normal(
                0.0, np.sqrt(2.0) / np.sqrt(fan_out), size=(fan_out, fan_in)
            )
            b = np.zeros(fan_out)
            if i == 0 and cfg.include_input and de > 3:
                w[:, 3:] = 0.0
        sdf_w.append(w)
        sdf_b.append(b)

    # The random geometric init only approximates |x| to ~25% at this width,
    # so refine the final linear weights by least squares against |x| over a
    # ball around the target surface. The bias stays exactly -radius and the
    # hidden layers are untouched; with zero hidden biases f(0) = -radius
    # holds exactly.
    fit_pts = rng.normal(size=(4096, 3))
    fit_pts /= np.linalg.norm(fit_pts, axis=1, keepdims=True)
    radii = 1.5 * radius * rng.uniform(0.0, 1.0, size=(4096, 1)) ** (1 / 3)
    fit_pts *= radii
    feat = _encode(fit_pts, cfg)
    h = feat
    for i in range(3):
        h = np.maximum(h @ sdf_w[i].T + sdf_b[i], 0.0)
    target = np.linalg.norm(fit_pts, axis=1)
    w4, *_ = np.linalg.lstsq(h, target, rcond=None)
    sdf_w[3] = w4[None, :]

    color_w, color_b = [], []
    dims_c = [de, hidden, hidden, hidden, 3]
    for i in range(4):
        fan_in, fan_out = dims_c[i], dims_c[i + 1]
        color_w.append(rng.normal(0.0, 0.1 / np.sqrt(fan_in), size=(fan_out, fan_in)))
        color_b.append(np.zeros(fan_out))

    return FieldParams(
        encoding=cfg,
        sdf_weights=sdf_w,
        sdf_biases=sdf_b,
        color_weights=color_w,
        color_biases=color_b,
    )


# ---------------------------------------------------------------------------
# Checkpoint I/O
#
# Layout: 8-byte magic, uint32 LE version, uint32 LE header length, a JSON
# header describing the encoding config and every array (name, shape, byte
# offset), then the raw little-endian float64 array data in header order.


def save_checkpoint(path, params: FieldParams, metadata: dict | None = None):
    """Write parameters to the versioned binary container."""
    names = _array_names()
    arrays = params.arrays()
    entries = []
    offset = 0
    for name, arr in zip(names, arrays):
        nbytes = arr.size * 8
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset}
        )
        offset += nbytes
    header = {
        "encoding": {
            "levels": params.encoding.levels,
            "include_input": params.encoding.include_input,
        },
        "dtype": "<f8",
        "arrays": entries,
        "metadata": metadata or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[FieldParams, dict]:
    """Read parameters back; returns (params, metadata)."""
    from .errors import FormatError

    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = fh.read()
    cfg = EncodingConfig(
        levels=header["encoding"]["levels"],
        include_input=header["encoding"]["include_input"],
    )
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(data):
            raise FormatError(
                f"checkpoint truncated: array {entry['name']} needs bytes "
                f"up to {end}, file has {len(data)}"
            )
        arrays[entry["name"]] = np.frombuffer(
            data[start:end], dtype="<f8"
        ).reshape(shape).astype(np.float64)
    try:
        params = FieldParams(
            encoding=cfg,
            sdf_weights=[arrays[f"sdf.w{i}"] for i in range(4)],
            sdf_biases=[arrays[f"sdf.b{i}"] for i in range(4)],
            color_weights=[arrays[f"color.w{i}"] for i in range(4)],
            color_biases=[arrays[f"color.b{i}"] for i in range(4)],
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint missing array {exc}") from exc
    return params, header.get("metadata", {})


def _array_names() -> list:
    names = []
    for i in range(4):
        names += [f"sdf.w{i}", f"sdf.b{i}"]
    for i in range(4):
        names += [f"color.w{i}", f"color.b{i}"]
    return names
