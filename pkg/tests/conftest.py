import numpy as np
import pytest

from matchrank import PreferenceMatrices


def random_market(rng, n_c, n_j, scale=1.0):
    return PreferenceMatrices(rng.random((n_c, n_j)) * scale, rng.random((n_j, n_c)) * scale)


def random_doubly_stochastic(rng, n, terms=None):
    terms = terms or n * n
    w = rng.dirichlet(np.ones(terms))
    m = np.zeros((n, n))
    for wi in w:
        m[np.arange(n), rng.permutation(n)] += wi
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
