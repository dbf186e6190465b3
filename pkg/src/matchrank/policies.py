"""Conventional ranking baselines: candidate-only scores and product scores."""
from __future__ import annotations

import numpy as np

from .market import DeterministicPolicy, PreferenceMatrices, descending_order


def rank_by_scores(scores: np.ndarray) -> DeterministicPolicy:
    """Sort every candidate row descending (ties by job index)."""
    return DeterministicPolicy(descending_order(np.asarray(scores, dtype=float), axis=1))


def naive_policy(prefs: PreferenceMatrices) -> DeterministicPolicy:
    return rank_by_scores(prefs.p_cj)


def reciprocal_scores(prefs: PreferenceMatrices) -> np.ndarray:
    # product rather than geometric mean: same order, one fewer operation
    return prefs.p_cj * prefs.p_jc.T


def reciprocal_policy(prefs: PreferenceMatrices) -> DeterministicPolicy:
    return rank_by_scores(reciprocal_scores(prefs))
