import numpy as np
import pytest

from pointfill import fields


def make_params(seed=0, hidden=6, levels=2, scale=0.5):
    """Small random FieldParams for gradient checks."""
    rng = np.random.default_rng(seed)
    cfg = fields.EncodingConfig(levels=levels)
    de = cfg.out_dim
    dims_s = [de, hidden, hidden, hidden, 1]
    dims_c = [de, hidden, hidden, hidden, 3]
    return fields.FieldParams(
        encoding=cfg,
        sdf_weights=[
            rng.normal(0, scale, (dims_s[i + 1], dims_s[i])) for i in range(4)
        ],
        sdf_biases=[rng.normal(0, 0.2, (dims_s[i + 1],)) for i in range(4)],
        color_weights=[
            rng.normal(0, scale, (dims_c[i + 1], dims_c[i])) for i in range(4)
        ],
        color_biases=[rng.normal(0, 0.2, (dims_c[i + 1],)) for i in range(4)],
    )


def fd_check(loss_fn, params, analytic, rng, n_coords=30, h=1e-6):
    """Compare an analytic FieldGrads against central finite differences on
    a random subset of coordinates. Returns the max relative error over
    coordinates where either side is non-negligible."""
    arrays = params.arrays()
    g_arrays = analytic.arrays()
    max_rel = 0.0
    sizes = np.array([a.size for a in arrays])
    total = sizes.sum()
    for flat_idx in rng.choice(total, size=min(n_coords, total), replace=False):
        ai = int(np.searchsorted(np.cumsum(sizes), flat_idx, side="right"))
        offset = flat_idx - (np.cumsum(sizes)[ai] - sizes[ai])
        arr = arrays[ai]
        idx = np.unravel_index(int(offset), arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        lp = loss_fn(params)
        arr[idx] = old - h
        lm = loss_fn(params)
        arr[idx] = old
        fd = (lp - lm) / (2 * h)
        an = g_arrays[ai][idx]
        if abs(fd) > 1e-7 or abs(an) > 1e-7:
            max_rel = max(
                max_rel, abs(an - fd) / max(abs(fd), abs(an), 1e-10)
            )
    return max_rel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
