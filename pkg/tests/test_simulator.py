import itertools

import numpy as np
import pytest

from matchrank import (
    DeterministicPolicy,
    ExaminationFunction,
    PreferenceMatrices,
    SizeGuardError,
    StochasticPolicy,
    estimate_sw,
    exact_sw,
    gini,
    naive_policy,
    simulate_once,
)
from matchrank.simulator import application_probabilities, sim_rng
from matchrank.sw import bvn_decompose

from conftest import random_doubly_stochastic, random_market


def matches_given_applications(applied, prefs, v):
    """Expected matches for a fixed application pattern; employers scan by score, then index."""
    vv = ExaminationFunction.parse(v)
    total = 0.0
    for j in range(prefs.num_jobs):
        applicants = [c for c in range(prefs.num_candidates) if applied[c, j]]
        applicants.sort(key=lambda c: (-prefs.p_jc[j, c], c))
        for r, c in enumerate(applicants, start=1):
            total += vv.value(r) * prefs.p_jc[j, c]
    return total


def enumerate_sw(prefs, rankings_by_candidate, v):
    """Sum over every ranking choice and every application outcome.

    ``rankings_by_candidate[c]`` is a list of (weight, ranking) pairs.
    """
    vv = ExaminationFunction.parse(v)
    n_c, n_j = prefs.shape
    vr = vv.at_ranks(n_j)
    total = 0.0
    for choice in itertools.product(*rankings_by_candidate):
        w_choice = np.prod([w for w, _ in choice])
        q = np.empty((n_c, n_j))
        for c, (_, ranking) in enumerate(choice):
            pos = np.empty(n_j, dtype=int)
            pos[np.asarray(ranking)] = np.arange(n_j)
            q[c] = vr[pos] * prefs.p_cj[c]
        for bits in itertools.product((0, 1), repeat=n_c * n_j):
            applied = np.array(bits).reshape(n_c, n_j)
            prob = np.prod(np.where(applied, q, 1.0 - q))
            if prob:
                total += w_choice * prob * matches_given_applications(applied, prefs, v)
    return total


def test_unit_market():
    prefs = PreferenceMatrices([[0.6]], [[0.7]])
    pol = DeterministicPolicy([[0]])
    assert exact_sw(pol, prefs, "inv") == pytest.approx(0.42, rel=1e-15)


def test_two_candidates_one_employer():
    prefs = PreferenceMatrices([[0.8], [0.5]], [[0.9, 0.4]])
    pol = DeterministicPolicy([[0], [0]])
    q1, q2, s1, s2 = 0.8, 0.5, 0.9, 0.4
    expected = q1 * s1 + q2 * s2 * (1.0 * (1 - q1) + 0.5 * q1)
    assert exact_sw(pol, prefs, "inv") == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("kind", ["inv", "log", "exp"])
def test_exact_matches_enumeration_deterministic(kind, rng):
    shapes = [(1, 1), (1, 3), (3, 1), (2, 2), (2, 3), (3, 2), (3, 3), (4, 2), (2, 4)]
    for n_c, n_j in shapes:
        prefs = random_market(rng, n_c, n_j)
        pol = DeterministicPolicy([rng.permutation(n_j) for _ in range(n_c)])
        oracle = enumerate_sw(prefs, [[(1.0, r)] for r in pol.rankings], kind)
        assert abs(exact_sw(pol, prefs, kind) - oracle) < 1e-12


def test_exact_matches_enumeration_with_ties(rng):
    for _ in range(5):
        prefs = PreferenceMatrices(rng.random((3, 3)), np.round(rng.random((3, 3)) * 2) / 2)
        pol = naive_policy(prefs)
        oracle = enumerate_sw(prefs, [[(1.0, r)] for r in pol.rankings], "inv")
        assert abs(exact_sw(pol, prefs, "inv") - oracle) < 1e-12


def test_exact_matches_enumeration_stochastic(rng):
    for n_c, n_j in [(2, 2), (3, 2), (2, 3)]:
        prefs = random_market(rng, n_c, n_j)
        mats = np.stack([random_doubly_stochastic(rng, n_j, terms=2) for _ in range(n_c)])
        pol = StochasticPolicy(mats)
        terms = [bvn_decompose(m).terms for m in mats]
        oracle = enumerate_sw(prefs, terms, "log")
        assert abs(exact_sw(pol, prefs, "log") - oracle) < 1e-12


def test_zero_preferences_never_match(rng):
    prefs = PreferenceMatrices(np.zeros((3, 2)), np.zeros((2, 3)))
    pol = naive_policy(prefs)
    out = simulate_once(pol, prefs, "inv", np.random.default_rng(0))
    assert out.total_matches == 0
    assert estimate_sw(pol, prefs, "inv", 200).mean == 0.0


def test_sure_match():
    prefs = PreferenceMatrices([[1.0]], [[1.0]])
    est = estimate_sw(DeterministicPolicy([[0]]), prefs, "exp", 500, seed=3)
    assert est.mean == 1.0 and est.stderr == 0.0


def test_outcome_accounting(rng):
    prefs = random_market(rng, 5, 4)
    pol = naive_policy(prefs)
    for i in range(20):
        out = simulate_once(pol, prefs, "inv", sim_rng(0, i))
        assert out.candidate_matches.sum() == out.total_matches == out.employer_matches.sum()


@pytest.mark.parametrize("kind", ["inv", "log", "exp"])
def test_monte_carlo_agrees_with_exact(kind, rng):
    for i in range(10):
        prefs = random_market(rng, 3, 2)
        if i % 2:
            pol = StochasticPolicy(np.stack([random_doubly_stochastic(rng, 2) for _ in range(3)]))
        else:
            pol = DeterministicPolicy([rng.permutation(2) for _ in range(3)])
        est = estimate_sw(pol, prefs, kind, 10_000, seed=100 + i)
        assert abs(est.mean - exact_sw(pol, prefs, kind)) <= 3 * est.stderr


def test_per_user_means_match_exact_pairs(rng):
    prefs = random_market(rng, 4, 3)
    pol = naive_policy(prefs)
    est = estimate_sw(pol, prefs, "inv", 20_000, seed=5)
    pairs = exact_sw(pol, prefs, "inv", per_pair=True)
    np.testing.assert_allclose(est.candidate_matches, pairs.sum(axis=1), atol=0.02)
    np.testing.assert_allclose(est.employer_matches, pairs.sum(axis=0), atol=0.02)


def test_replay_and_batching_do_not_change_estimates(rng):
    prefs = random_market(rng, 6, 5)
    pol = StochasticPolicy(np.stack([random_doubly_stochastic(rng, 5) for _ in range(6)]))
    a = estimate_sw(pol, prefs, "inv", 1000, seed=9)
    b = estimate_sw(pol, prefs, "inv", 1000, seed=9)
    c = estimate_sw(pol, prefs, "inv", 1000, seed=9, batch_size=7)
    assert a.mean == b.mean == c.mean and a.stderr == c.stderr
    np.testing.assert_array_equal(a.employer_matches, c.employer_matches)
    assert estimate_sw(pol, prefs, "inv", 1000, seed=10).mean != a.mean


def test_application_probabilities_deterministic_vs_matrices(rng):
    prefs = random_market(rng, 3, 4)
    pol = naive_policy(prefs)
    np.testing.assert_allclose(
        application_probabilities(pol, prefs, "log"),
        application_probabilities(StochasticPolicy(pol.as_matrices()), prefs, "log"),
    )


def test_size_guard():
    prefs = PreferenceMatrices(np.zeros((1001, 1000)), np.zeros((1000, 1001)))
    with pytest.raises(SizeGuardError):
        exact_sw(DeterministicPolicy(np.tile(np.arange(1000), (1001, 1))), prefs, "inv")


def test_result_json_keys(rng):
    prefs = random_market(rng, 2, 2)
    obj = estimate_sw(naive_policy(prefs), prefs, "inv", 10, seed=1).to_json()
    assert set(obj) == {"mean", "stderr", "gini_candidates", "gini_employers", "n_sims", "seed"}


def test_incompatible_policy(rng):
    with pytest.raises(ValueError):
        estimate_sw(DeterministicPolicy([[0, 1]]), random_market(rng, 2, 2), "inv", 10)


def gini_lorenz(x):
    """1 - 2 * area under the Lorenz curve (trapezoids), the cumulative-share form."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    shares = np.concatenate([[0.0], np.cumsum(x) / x.sum()])
    area = np.sum((shares[1:] + shares[:-1]) / 2) / n
    return 1.0 - 2.0 * area


def test_gini_examples():
    assert gini([3, 3, 3, 3]) == 0.0
    assert gini([0, 0, 0, 5]) == pytest.approx(3 / 4, abs=1e-15)
    assert gini([0, 0, 0]) == 0.0
    with pytest.raises(ValueError):
        gini([])
    with pytest.raises(ValueError):
        gini([1, -1])


def test_gini_matches_lorenz_form(rng):
    for n in (2, 5, 50, 301):
        x = rng.random(n) * rng.integers(1, 100)
        assert abs(gini(x) - gini_lorenz(x)) < 1e-12
