import numpy as np
import pytest

from ceqln.network import (
    ACTIVATION_KINDS,
    LayerSpec,
    NetworkSpec,
    init_uniform,
    pack,
    unpack,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spec(rng, max_layers=3, max_units=12, n_basis=None):
    """Random small network structure with at least one non-product unit
    per layer so widths stay sane."""
    n_layers = int(rng.integers(1, max_layers + 1))
    hidden = []
    for _ in range(n_layers):
        n_units = int(rng.integers(2, max_units + 1))
        kinds = [str(rng.choice(ACTIVATION_KINDS)) for _ in range(n_units)]
        hidden.append(LayerSpec(tuple(kinds)))
    n_basis = n_basis or int(rng.integers(1, 6))
    return NetworkSpec(tuple(hidden), n_basis=n_basis)


def random_params(spec, rng, scale=1.5):
    ranges = [((-scale, scale), (-scale, scale))] * spec.n_layers
    return init_uniform(spec, ranges, seed=int(rng.integers(2**32)))


def central_difference(fn, theta, h_rel=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        h = h_rel * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        grad[i] = (fn(tp) - fn(tm)) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-5, abs_tol=1e-8):
    scale = np.maximum(np.abs(numeric), np.abs(analytic))
    err = np.abs(analytic - numeric)
    ok = (err <= abs_tol) | (err <= rel * scale)
    assert np.all(ok), (
        f"gradient mismatch: max abs err {err.max():.3e}, "
        f"worst rel {np.max(err / np.maximum(scale, 1e-300)):.3e}"
    )
