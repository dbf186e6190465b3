"""Two-stage market simulation, an exact expected-matches oracle, and Gini.

Stage 1: candidate c applies to job j with probability ``v(rank of j in c's
list) * p_cj``, independently per pair.  Stage 2: employer j walks its
applicants in descending ``p_jc`` order (ties: lower candidate index first) and
matches the applicant at position r with probability ``v(r) * p_jc``.

Random numbers: simulation ``i`` under seed ``s`` draws from numpy's SFC64
generator seeded with ``SeedSequence(s, spawn_key=(i,))``, i.e. the i-th child
stream of ``SeedSequence(s)``.  A simulation's outcome therefore depends only
on ``(s, i)``, never on batching or execution order.  Per simulation the draws
are, in order: one uniform per candidate to pick a ranking (stochastic policies
only), a ``C x J`` block for applications, then one uniform per application in
row-major ``(c, j)`` order for the employer decisions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SizeGuardError
from .market import (
    DeterministicPolicy,
    ExaminationFunction,
    Policy,
    PreferenceMatrices,
    StochasticPolicy,
    check_compatible,
)
from .sw import Competition, BvnDecomposition, decompose_policy, expected_exposure

EXACT_SIZE_GUARD = 10**6


@dataclass(frozen=True, eq=False)
class MarketOutcome:
    total_matches: int
    candidate_matches: np.ndarray
    employer_matches: np.ndarray

    def __post_init__(self):
        if not (self.candidate_matches.sum() == self.total_matches == self.employer_matches.sum()):
            raise AssertionError("match accounting is inconsistent")


@dataclass(frozen=True, eq=False)
class SWEstimate:
    mean: float
    stderr: float
    n_sims: int
    seed: int
    candidate_matches: np.ndarray = field(repr=False, default=None)
    employer_matches: np.ndarray = field(repr=False, default=None)

    @property
    def gini_candidates(self) -> float:
        return gini(self.candidate_matches)

    @property
    def gini_employers(self) -> float:
        return gini(self.employer_matches)

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "gini_candidates": self.gini_candidates,
            "gini_employers": self.gini_employers,
            "n_sims": self.n_sims,
            "seed": self.seed,
        }


def sim_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for simulation ``index`` of a run seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.SFC64(ss))


class _Sampler:
    """Everything about (policy, market, v) that does not change between simulations."""

    def __init__(self, policy: Policy, prefs: PreferenceMatrices, v: ExaminationFunction):
        check_compatible(policy, prefs)
        self.prefs = prefs
        n_c, n_j = prefs.shape
        self.n_c, self.n_j = n_c, n_j
        self.comp = Competition(prefs.p_jc)
        # v(1..C); index 0 is padding for rank 0 (non-applicants, masked out)
        self.v_employer = np.concatenate([[0.0], v.at_ranks(n_c)])
        v_job = v.at_ranks(n_j)
        self.stochastic = isinstance(policy, StochasticPolicy)
        if self.stochastic:
            decomps = decompose_policy(policy)
            self._setup_terms(decomps, v_job)
        else:
            self.app_prob = v_job[policy.positions()] * prefs.p_cj

    def _setup_terms(self, decomps: tuple[BvnDecomposition, ...], v_job: np.ndarray) -> None:
        probs, bounds = [], []
        for c, d in enumerate(decomps):
            pos = np.empty_like(d.permutations)
            np.put_along_axis(pos, d.permutations, np.arange(self.n_j)[None, :].repeat(len(d), 0), axis=1)
            probs.append(v_job[pos] * self.prefs.p_cj[c][None, :])
            cum = np.cumsum(d.weights) / d.weights.sum()
            cum[-1] = 1.0
            bounds.append(c + cum)
        self.term_probs = np.concatenate(probs)  # (total terms, J)
        self.term_bounds = np.concatenate(bounds)
        self.term_last = np.cumsum([len(d) for d in decomps]) - 1

    def application_probs(self, u_terms: np.ndarray) -> np.ndarray:
        """Per-simulation application probabilities given the ranking-choice uniforms (B, C)."""
        target = np.arange(self.n_c)[None, :] + u_terms
        idx = np.searchsorted(self.term_bounds, target, side="right")
        idx = np.minimum(idx, self.term_last[None, :])
        return self.term_probs[idx]

    def run(self, gens: list[np.random.Generator]):
        """Simulate one batch; returns per-sim totals and batch-summed per-user counts."""
        b = len(gens)
        if self.stochastic:
            u_terms = np.stack([g.random(self.n_c) for g in gens])
            app_prob = self.application_probs(u_terms)
        else:
            app_prob = self.app_prob[None]
        u_apply = np.empty((b, self.n_c, self.n_j))
        for g, out in zip(gens, u_apply):
            g.random(out=out)
        # applications are sparse; flatnonzero lists them row-major in (sim, c, j)
        flat = np.flatnonzero(u_apply < app_prob)
        sim, rest = np.divmod(flat, self.n_c * self.n_j)
        cand, job = np.divmod(rest, self.n_j)
        counts = np.bincount(sim, minlength=b)
        u_emp = np.concatenate([g.random(int(k)) for g, k in zip(gens, counts)])

        # rank of each application within its (sim, employer) list
        group = sim * self.n_j + job
        key = group * self.n_c + self.comp.inverse[job, cand]
        perm = np.argsort(key, kind="stable")
        g_sorted = group[perm]
        idx = np.arange(len(perm))
        starts = np.ones(len(perm), dtype=bool)
        starts[1:] = g_sorted[1:] != g_sorted[:-1]
        first = np.maximum.accumulate(np.where(starts, idx, 0)) if len(perm) else idx
        rank = np.empty_like(idx)
        rank[perm] = idx - first + 1

        accept = self.v_employer[rank] * self.prefs.p_jc[job, cand]
        hit = u_emp < accept
        totals = np.bincount(sim[hit], minlength=b)
        candidate = np.bincount(cand[hit], minlength=self.n_c)
        employer = np.bincount(job[hit], minlength=self.n_j)
        return totals, candidate, employer


def simulate_once(policy: Policy, prefs: PreferenceMatrices, v, rng: np.random.Generator) -> MarketOutcome:
    """One round of applications and employer decisions."""
    sampler = _Sampler(policy, prefs, ExaminationFunction.parse(v))
    totals, cand, emp = sampler.run([rng])
    return MarketOutcome(int(totals[0]), cand.astype(np.int64), emp.astype(np.int64))


def estimate_sw(
    policy: Policy,
    prefs: PreferenceMatrices,
    v,
    n_sims: int = 10_000,
    seed: int = 0,
    batch_size: int | None = None,
) -> SWEstimate:
    """Monte-Carlo mean and standard error of the number of matches.

    Per-user match counts are averaged over simulations and kept on the
    estimate for the Gini metrics.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be at least 1")
    v = ExaminationFunction.parse(v)
    sampler = _Sampler(policy, prefs, v)
    if batch_size is None:
        # keep per-batch float arrays around ~16 MB
        batch_size = max(1, min(512, 2_000_000 // (prefs.num_candidates * prefs.num_jobs)))
    totals = np.empty(n_sims, dtype=np.int64)
    cand = np.zeros(prefs.num_candidates, dtype=np.int64)
    emp = np.zeros(prefs.num_jobs, dtype=np.int64)
    for start in range(0, n_sims, batch_size):
        stop = min(n_sims, start + batch_size)
        gens = [sim_rng(seed, i) for i in range(start, stop)]
        t, c, e = sampler.run(gens)
        totals[start:stop] = t
        cand += c
        emp += e
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / math.sqrt(n_sims)) if n_sims > 1 else 0.0
    return SWEstimate(mean, stderr, n_sims, int(seed), cand / n_sims, emp / n_sims)


def application_probabilities(policy: Policy, prefs: PreferenceMatrices, v) -> np.ndarray:
    """Marginal probability that c applies to j, ``(C, J)``."""
    v = ExaminationFunction.parse(v)
    check_compatible(policy, prefs)
    if isinstance(policy, DeterministicPolicy):
        return v.at_ranks(prefs.num_jobs)[policy.positions()] * prefs.p_cj
    return expected_exposure(policy.matrices, v) * prefs.p_cj


def exact_sw(policy: Policy, prefs: PreferenceMatrices, v, per_pair: bool = False):
    """Expected number of matches in closed form.

    Applications are independent across candidates, so the number of
    applicants ranked above c at employer j is Poisson-binomial; its pmf is
    built by the usual one-Bernoulli-at-a-time convolution while walking each
    employer's list.
    """
    n_c, n_j = prefs.shape
    if n_c * n_j > EXACT_SIZE_GUARD:
        raise SizeGuardError(
            f"exact_sw is limited to |C|*|J| <= {EXACT_SIZE_GUARD}; use estimate_sw for this market"
        )
    v = ExaminationFunction.parse(v)
    q = application_probabilities(policy, prefs, v)
    order = Competition(prefs.p_jc).order  # (J, C)
    jobs = np.arange(n_j)
    v_next = v.at_ranks(n_c)  # v(1 + m), m = 0..C-1
    pmf = np.zeros((n_j, n_c + 1))
    pmf[:, 0] = 1.0
    contrib = np.zeros((n_c, n_j))
    for i in range(n_c):
        c = order[:, i]
        qi = q[c, jobs]
        ev = pmf[:, : i + 1] @ v_next[: i + 1]
        contrib[c, jobs] = qi * prefs.p_jc[jobs, c] * ev
        pmf[:, 1 : i + 2] = pmf[:, 1 : i + 2] * (1.0 - qi)[:, None] + pmf[:, : i + 1] * qi[:, None]
        pmf[:, 0] *= 1.0 - qi
    if per_pair:
        return contrib
    return float(contrib.sum())


def gini(counts) -> float:
    """Mean absolute difference over all pairs, normalised by twice the mean.

    All-zero input returns 0.
    """
    x = np.sort(np.asarray(counts, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("gini of an empty vector")
    if np.any(x < 0):
        raise ValueError("gini needs nonnegative values")
    total = x.sum()
    if total == 0:
        return 0.0
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n + 1) x_(i) on sorted data
    pair_sum = 2.0 * np.dot(2.0 * np.arange(n) - n + 1.0, x)
    # rounding can push equal inputs a hair below zero
    return float(min(max(pair_sum / (2.0 * n * total), 0.0), 1.0))
