import numpy as np
import pytest

from xlret.config import LossConfig, ProjectionConfig
from xlret.projection import init_weights

FD_STEP = 1e-6


def central_diff(f, arr, idx, h=FD_STEP):
    """Central difference of scalar f() w.r.t. arr[idx], restoring arr afterwards."""
    orig = arr[idx]
    arr[idx] = orig + h
    fp = f()
    arr[idx] = orig - h
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2 * h)


def rel_err(analytic, numeric, scale, floor_frac=1e-4):
    """|a - n| / max(|a|, |n|, floor) with floor = floor_frac * max(1, |f|).

    Central differences at h=1e-6 carry roundoff of about 2e-10 * |f|, so a
    component much smaller than the floor cannot be resolved relatively;
    for those the check degrades to |a - n| <= tol * floor.  A 1e-6 check
    needs floor_frac around 1e-3 to stay clear of that roundoff.
    """
    floor = floor_frac * max(1.0, abs(scale))
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def away_from_kinks(cache, config, margin=1e-5):
    """True if no kept ReLU input lies within ``margin`` of zero."""
    for k in range(config.n_blocks):
        if not config.relu_flags[k]:
            continue
        z = cache.pre_act[k]
        kept = cache.masks[k] != 0 if cache.masks[k] is not None else np.ones(z.shape, bool)
        if np.any(np.abs(z[kept]) <= margin):
            return False
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_small_config(rng, max_dim=16, output_dim=None):
    n_blocks = int(rng.integers(1, 4))
    dims = [int(rng.integers(2, max_dim + 1)) for _ in range(n_blocks)]
    if output_dim is not None:
        dims[-1] = output_dim
    return ProjectionConfig(
        input_dim=int(rng.integers(2, max_dim + 1)),
        block_dims=dims,
        dropout_rates=[float(rng.choice([0.0, 0.1, 0.3])) for _ in range(n_blocks)],
        l2norm_flags=[bool(rng.integers(0, 2)) for _ in range(n_blocks - 1)] + [False],
        relu_flags=[bool(rng.integers(0, 2)) if k < n_blocks - 1 else True for k in range(n_blocks)],
    )


def perturbed_weights(config, seed, rng, noise=0.1):
    """Init weights plus random biases so no pre-activation sits on a kink by symmetry."""
    w = init_weights(config, seed)
    for b in w.b:
        b += rng.normal(0.0, noise, b.shape)
    return w


@pytest.fixture
def loss_configs():
    return {
        "m3l": LossConfig(kind="m3l"),
        "patr": LossConfig(kind="patr", eta=2.0),
    }
