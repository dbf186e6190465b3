import math

import numpy as np
import pytest
from scipy.optimize import root

from matchrank import (
    DomainError,
    EquilibriumMatching,
    NotConvergedError,
    NumericalOverflowError,
    PreferenceMatrices,
    TUConfig,
    build_embeddings,
    recover_transfers,
    solve_ipfp,
    top_k_by_dot,
    tu_policy,
)
from matchrank.errors import DegenerateEquilibriumError
from matchrank.tu import EmbeddingSet, candidate_demand, employer_demand, exact_features

from conftest import random_market


def test_unit_market_zero_preferences():
    prefs = PreferenceMatrices(np.zeros((1, 1)), np.zeros((1, 1)))
    for beta in (0.1, 1.0, 7.0):
        # stopping on a 1e-9 step leaves ~1e-11 error under linear convergence
        eq = solve_ipfp(prefs, TUConfig(beta, tol=1e-12))
        assert eq.converged
        assert abs(eq.mu[0, 0] - 0.5) < 1e-12
        assert abs(eq.A[0] - math.sqrt(0.5)) < 1e-12
        np.testing.assert_array_equal(tu_policy(eq).rankings, [[0]])
        assert abs(recover_transfers(prefs, eq)[0, 0]) < 1e-12


def test_two_by_two_against_root_finder():
    p_cj = np.array([[0.9, 0.1], [0.2, 0.8]])
    p_jc = np.array([[0.3, 0.6], [0.7, 0.4]])
    prefs = PreferenceMatrices(p_cj, p_jc)
    eq = solve_ipfp(prefs, TUConfig(1.0))
    assert eq.converged and eq.residual < 1e-9

    k = np.exp((p_cj + p_jc.T) / 2.0)

    def equations(x):
        a, b = x[:2], x[2:]
        return np.concatenate([a * a + a * (k @ b) - 1.0, b * b + b * (k.T @ a) - 1.0])

    sol = root(equations, np.full(4, 0.5), tol=1e-14)
    assert sol.success
    np.testing.assert_allclose(eq.A, sol.x[:2], atol=1e-9)
    np.testing.assert_allclose(eq.B, sol.x[2:], atol=1e-9)
    np.testing.assert_allclose(eq.mu, k * np.outer(sol.x[:2], sol.x[2:]), atol=1e-9)


def test_marginals_and_equal_demands(rng):
    prefs = random_market(rng, 7, 5)
    eq = solve_ipfp(prefs, TUConfig(0.7))
    assert eq.converged
    assert eq.marginal_violation() < 1e-9
    tau = recover_transfers(prefs, eq)
    np.testing.assert_allclose(candidate_demand(prefs, tau, eq.beta), eq.mu, atol=1e-7)
    np.testing.assert_allclose(employer_demand(prefs, tau, eq.beta), eq.mu, atol=1e-7)


def test_row_order_follows_closed_form(rng):
    prefs = random_market(rng, 6, 9)
    for beta in (0.5, 5.0, 50.0):
        eq = solve_ipfp(prefs, TUConfig(beta))
        score = prefs.p_cj + prefs.p_jc.T + 2 * beta * np.log(eq.B)[None, :]
        np.testing.assert_array_equal(tu_policy(eq).rankings, np.argsort(-score, axis=1, kind="stable"))


def test_residuals_non_increasing(rng):
    for _ in range(5):
        prefs = random_market(rng, 10, 8)
        h = np.array(solve_ipfp(prefs, TUConfig(1.0)).history)
        assert np.all(np.diff(h) <= 1e-15)


def test_direct_update_reaches_same_fixed_point(rng):
    prefs = random_market(rng, 6, 4)
    a = solve_ipfp(prefs, TUConfig(1.0))
    b = solve_ipfp(prefs, TUConfig(1.0, update="direct"))
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-9)


def test_overflow_names_beta():
    prefs = PreferenceMatrices(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(NumericalOverflowError, match="beta=0.001"):
        solve_ipfp(prefs, TUConfig(0.001))


def test_max_iters_flags_non_convergence(rng):
    prefs = random_market(rng, 5, 5)
    eq = solve_ipfp(prefs, TUConfig(1.0, max_iters=2))
    assert not eq.converged and eq.iterations == 2
    with pytest.raises(NotConvergedError):
        tu_policy(eq)
    with pytest.raises(NotConvergedError):
        recover_transfers(prefs, eq)
    assert tu_policy(eq, force=True).rankings.shape == (5, 5)


def test_degenerate_equilibrium():
    eq = EquilibriumMatching(np.zeros((1, 1)), np.ones(1), np.ones(1), 1.0, 1, 0.0, True)
    prefs = PreferenceMatrices(np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(DegenerateEquilibriumError):
        recover_transfers(prefs, eq)


@pytest.mark.parametrize("kwargs", [{"beta": 0}, {"tol": -1}, {"max_iters": 0}, {"update": "fast"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TUConfig(**kwargs)


def test_equilibrium_json_round_trip(rng):
    eq = solve_ipfp(random_market(rng, 3, 2))
    obj = eq.to_json()
    assert set(obj) == {"mu", "mu_c0", "mu_0j", "beta", "iterations", "residual", "converged"}
    back = EquilibriumMatching.from_json(obj)
    np.testing.assert_array_equal(back.mu, eq.mu)
    assert back.converged == eq.converged and back.iterations == eq.iterations


def test_embedding_vector_layout():
    eq = EquilibriumMatching(np.array([[0.5]]), np.array([0.25]), np.array([0.5]), 1.0, 1, 0.0, True)
    emb = build_embeddings([[2.0]], [[3.0]], [[1.0]], [[1.0]], eq, check_samples=0)
    np.testing.assert_allclose(emb.candidate_vectors[0], [2.0, 3.0, math.log(0.25), 1.0])
    np.testing.assert_allclose(emb.job_vectors[0], [1.0, 1.0, 1.0, math.log(0.5)])
    assert emb.dim == 4


def test_embedding_reproduces_log_mu(rng):
    prefs = random_market(rng, 9, 7)
    eq = solve_ipfp(prefs, TUConfig(0.8))
    emb = build_embeddings(*exact_features(prefs), eq)
    np.testing.assert_allclose(emb.scores(), 2 * eq.beta * np.log(eq.mu), atol=1e-9)
    full = tu_policy(eq).rankings
    for c in range(9):
        for k in (1, 3, 7):
            np.testing.assert_array_equal(top_k_by_dot(emb, c, k), full[c, :k])
    back = EmbeddingSet.from_json(emb.to_json())
    np.testing.assert_array_equal(back.candidate_vectors, emb.candidate_vectors)


def test_embedding_checks(rng):
    prefs = random_market(rng, 3, 4)
    eq = solve_ipfp(prefs)
    phi1, phi2, psi1, psi2 = exact_features(prefs)
    with pytest.raises(DomainError):
        build_embeddings(phi1[:, :2], phi2, psi1, psi2, eq)
    with pytest.warns(RuntimeWarning):
        build_embeddings(phi1 * 0.5, phi2, psi1, psi2, eq)


def test_top_k_ties_and_bounds():
    emb = EmbeddingSet(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [2.0, 0.0], [2.0, 0.0]]), 1.0)
    np.testing.assert_array_equal(top_k_by_dot(emb, 0, 3), [1, 2, 0])
    with pytest.raises(DomainError):
        top_k_by_dot(emb, 0, 4)
    with pytest.raises(DomainError):
        top_k_by_dot(emb, 1, 1)
    one = EmbeddingSet(np.ones((1, 4)), np.ones((1, 4)), 1.0)
    np.testing.assert_array_equal(top_k_by_dot(one, 0, 1), [0])


def test_uniform_shift_can_reorder_through_outside_masses():
    # shifting both score matrices scales the kernel uniformly, but B re-solves per job
    g = np.random.default_rng(0)
    changed = 0
    for _ in range(100):
        n_c, n_j = g.integers(1, 7, 2)
        base = PreferenceMatrices(g.random((n_c, n_j)) * 0.5, g.random((n_j, n_c)) * 0.5)
        shifted = PreferenceMatrices(base.p_cj + 0.5, base.p_jc + 0.5)
        a, b = solve_ipfp(base), solve_ipfp(shifted)
        changed += not np.array_equal(tu_policy(a).rankings, tu_policy(b).rankings)
    assert changed > 0
