import numpy as np

from matchrank import PreferenceMatrices, naive_policy, reciprocal_policy
from matchrank.policies import reciprocal_scores

from conftest import random_market


def _one(p_row, p_col=None):
    p_row = np.atleast_2d(p_row)
    p_col = np.ones_like(p_row).T if p_col is None else np.atleast_2d(p_col).T
    return PreferenceMatrices(p_row, p_col)


def test_naive_examples():
    np.testing.assert_array_equal(naive_policy(_one([0.2, 0.9, 0.5])).rankings, [[1, 2, 0]])
    np.testing.assert_array_equal(naive_policy(_one([0.5, 0.5])).rankings, [[0, 1]])
    np.testing.assert_array_equal(naive_policy(_one([0.9, 0.6, 0.1])).rankings, [[0, 1, 2]])


def test_reciprocal_examples():
    prefs = _one([0.9, 0.4], [0.1, 0.8])
    np.testing.assert_allclose(reciprocal_scores(prefs), [[0.09, 0.32]])
    np.testing.assert_array_equal(reciprocal_policy(prefs).rankings, [[1, 0]])
    np.testing.assert_array_equal(reciprocal_policy(_one([0.5, 0.25], [0.5, 1.0])).rankings, [[0, 1]])


def test_reciprocal_with_unit_employers_is_naive(rng):
    p = rng.random((5, 7))
    prefs = PreferenceMatrices(p, np.ones((7, 5)))
    np.testing.assert_array_equal(reciprocal_policy(prefs).rankings, naive_policy(prefs).rankings)


def test_monotone_invariance(rng):
    prefs = random_market(rng, 6, 8)
    squashed = PreferenceMatrices(prefs.p_cj**3, prefs.p_jc)
    np.testing.assert_array_equal(naive_policy(prefs).rankings, naive_policy(squashed).rankings)


def test_reciprocal_symmetric_in_sides(rng):
    p = rng.random((4, 4))
    q = rng.random((4, 4))
    a = reciprocal_policy(PreferenceMatrices(p, q.T))
    b = reciprocal_policy(PreferenceMatrices(q, p.T))
    np.testing.assert_array_equal(a.rankings, b.rankings)
