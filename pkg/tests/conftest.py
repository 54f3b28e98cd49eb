import itertools

import numpy as np
import pytest

from grbm_infomax.core import GrbmParams


def random_params(rng, M, N, scale=0.8, sigma_range=(0.6, 1.4)):
    return GrbmParams(
        scale * rng.standard_normal((M, N)),
        0.5 * rng.standard_normal(M),
        0.5 * rng.standard_normal(N),
        rng.uniform(*sigma_range, size=N),
    )


def energy(params, v, h):
    """E(v, h) written out term by term, independent of the library code."""
    v = np.asarray(v, dtype=float)
    h = np.asarray(h, dtype=float)
    total = 0.0
    for j in range(params.N):
        total += (v[j] - params.b[j]) ** 2 / (2 * params.sigma[j] ** 2)
    for i in range(params.M):
        total -= params.a[i] * h[i]
        for j in range(params.N):
            total -= v[j] / params.sigma[j] ** 2 * params.W[i, j] * h[i]
    return total


def all_hidden(M):
    return [np.array(h, dtype=float) for h in itertools.product((0, 1), repeat=M)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
