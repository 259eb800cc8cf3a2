"""Shared oracles for the test suite: finite differences and error metrics."""

import numpy as np
import pytest

from twophase.losses import loss_value
from twophase.network import NetworkSpec, forward_output, params_from_flat, random_params


def max_rel_err(a, b):
    """Largest entrywise difference relative to the largest entry magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def fd_loss_grad(spec, params, x, y, kind, frozen_stats=None, step=1e-5):
    """Central finite differences of the scalar loss over the flat parameters."""
    w = params.to_flat()
    out = np.empty_like(w)
    for j in range(w.size):
        wp = w.copy()
        wp[j] += step
        wm = w.copy()
        wm[j] -= step
        fp = forward_output(spec, params_from_flat(spec, wp), x, frozen_stats)
        fm = forward_output(spec, params_from_flat(spec, wm), x, frozen_stats)
        out[j] = (loss_value(kind, fp, y) - loss_value(kind, fm, y)) / (2 * step)
    return out


def fd_jacobian(spec, params, x, frozen_stats=None, step=1e-5):
    """Central finite differences of vec(f(X)^T) over the flat parameters."""
    w = params.to_flat()
    n = np.asarray(x).shape[0]
    rows = n * spec.output_dim
    out = np.empty((rows, w.size))
    for j in range(w.size):
        wp = w.copy()
        wp[j] += step
        wm = w.copy()
        wm[j] -= step
        fp = forward_output(spec, params_from_flat(spec, wp), x, frozen_stats)
        fm = forward_output(spec, params_from_flat(spec, wm), x, frozen_stats)
        out[:, j] = ((fp - fm) / (2 * step)).reshape(-1)
    return out


def random_small_config(rng, allow_bn=True):
    """A small random architecture with parameters and a batch, for FD checks."""
    depth = int(rng.integers(1, 4))
    widths = tuple(int(w) for w in rng.integers(2, 6, size=depth + 1))
    m_y = int(rng.integers(1, 4))
    sharpness = float(rng.choice([1.0, 10.0, 100.0]))
    if allow_bn:
        flags = tuple(bool(b) for b in rng.integers(0, 2, size=depth))
    else:
        flags = (False,) * depth
    eps = float(rng.choice([1e-5, 1e-2]))
    spec = NetworkSpec(widths, m_y, sharpness=sharpness, bn_flags=flags, bn_epsilon=eps)
    params = random_params(spec, rng, scale=0.8)
    n = int(rng.integers(2, 7))
    x = rng.standard_normal((n, widths[0]))
    return spec, params, x


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
