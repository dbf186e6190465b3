"""Stochastic ranking by approximate social-welfare maximisation.

Each candidate's ranking distribution is represented by a doubly stochastic
matrix ``M[c]`` (``M[c, j, k]`` = probability job j is shown at position k).
The objective is the Jensen lower bound on the expected number of matches::

    sum_{c,j} p_cj p_jc * v(1 + X[c, j]) * e[c, j]
    e[c, j] = sum_k M[c, j, k] v(k)                    (exposure)
    X[c, j] = sum_{c': p_jc' > p_jc} p_c'j e[c', j]    (expected applicants ranked above c)

and it is maximised with Frank-Wolfe over the product of Birkhoff polytopes.
Only candidates *strictly* preferred by the employer count as competitors here.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InfeasibleMatrixError
from .market import (
    DeterministicPolicy,
    ExaminationFunction,
    PreferenceMatrices,
    StochasticPolicy,
    descending_order,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SWConfig:
    T: int = 50
    eta: float = 0.2
    examination: ExaminationFunction = field(default_factory=lambda: ExaminationFunction("inv"))
    # "sort": rearrangement solution of the rank-one assignment (exact, O(n log n));
    # "assignment": general Hungarian-type solver on the full gradient block
    lmo: str = "sort"

    def __post_init__(self):
        if self.lmo not in ("sort", "assignment"):
            raise ValueError(f"lmo must be 'sort' or 'assignment', got {self.lmo!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta!r}")
        object.__setattr__(self, "examination", ExaminationFunction.parse(self.examination))


def memory_bytes(num_candidates: int, num_jobs: int) -> int:
    """Bytes held by the full set of doubly stochastic matrices."""
    return 8 * num_candidates * num_jobs * num_jobs


def _as_matrices(policy) -> np.ndarray:
    if isinstance(policy, StochasticPolicy):
        return policy.matrices
    if isinstance(policy, DeterministicPolicy):
        return policy.as_matrices()
    return np.asarray(policy, dtype=float)


def expected_exposure(m_c: np.ndarray, v: ExaminationFunction) -> np.ndarray:
    """Position-marginal examination probability of every job (works batched over leading axes)."""
    m_c = np.asarray(m_c, dtype=float)
    v = ExaminationFunction.parse(v)
    return m_c @ v.at_ranks(m_c.shape[-1])


class Competition:
    """Per-employer strict-preference prefix sums, precomputed once per market."""

    def __init__(self, p_jc: np.ndarray):
        p_jc = np.asarray(p_jc, dtype=float)
        n_j, n_c = p_jc.shape
        self.order = descending_order(p_jc, axis=1)
        self.inverse = np.empty_like(self.order)
        np.put_along_axis(self.inverse, self.order, np.arange(n_c)[None, :].repeat(n_j, axis=0), axis=1)
        s = np.take_along_axis(p_jc, self.order, axis=1)
        idx = np.broadcast_to(np.arange(n_c), (n_j, n_c))
        starts = np.ones((n_j, n_c), dtype=bool)
        starts[:, 1:] = s[:, 1:] != s[:, :-1]
        # sorted position of the first / one-past-last member of each tie group
        self.first = np.maximum.accumulate(np.where(starts, idx, 0), axis=1)
        ends = np.ones((n_j, n_c), dtype=bool)
        ends[:, :-1] = s[:, 1:] != s[:, :-1]
        last = np.minimum.accumulate(np.where(ends, idx, n_c)[:, ::-1], axis=1)[:, ::-1]
        self.stop = last + 1

    def _prefix(self, values: np.ndarray):
        vs = np.take_along_axis(values, self.order, axis=1)
        csum = np.zeros((vs.shape[0], vs.shape[1] + 1))
        np.cumsum(vs, axis=1, out=csum[:, 1:])
        return csum

    def _unsort(self, sorted_vals: np.ndarray) -> np.ndarray:
        return np.take_along_axis(sorted_vals, self.inverse, axis=1)

    def above(self, values: np.ndarray) -> np.ndarray:
        """``out[j, c] = sum of values[j, c']`` over c' strictly preferred to c by j."""
        csum = self._prefix(values)
        return self._unsort(np.take_along_axis(csum, self.first, axis=1))

    def below(self, values: np.ndarray) -> np.ndarray:
        """``out[j, c] = sum of values[j, c']`` over c' strictly less preferred than c by j."""
        csum = self._prefix(values)
        return self._unsort(csum[:, -1:] - np.take_along_axis(csum, self.stop, axis=1))


def _terms(m_all, prefs: PreferenceMatrices, v: ExaminationFunction, comp: Competition | None):
    comp = comp or Competition(prefs.p_jc)
    e = expected_exposure(_as_matrices(m_all), v)  # (C, J)
    q = prefs.p_cj * e
    x = comp.above(q.T).T
    w = prefs.mutual()
    return comp, e, x, w


def approx_sw(m_all, prefs: PreferenceMatrices, v, comp: Competition | None = None) -> float:
    v = ExaminationFunction.parse(v)
    _, e, x, w = _terms(m_all, prefs, v, comp)
    return float(np.sum(w * v.value(1.0 + x) * e))


def grad_exposure(m_all, prefs: PreferenceMatrices, v, comp: Competition | None = None) -> np.ndarray:
    """d(approx_sw)/d(exposure[c, j]).

    Direct term ``w v(1+X) `` plus the effect of c's exposure on every
    less-preferred applicant's competition term at the same employer.
    """
    v = ExaminationFunction.parse(v)
    if not v.differentiable:
        raise NotImplementedError("the social-welfare gradient needs a closed-form examination function")
    comp, e, x, w = _terms(m_all, prefs, v, comp)
    direct = w * v.value(1.0 + x)
    z = w * v.derivative(1.0 + x) * e
    coupling = comp.below(z.T).T * prefs.p_cj
    return direct + coupling


def grad_approx_sw(m_all, prefs: PreferenceMatrices, v, comp: Competition | None = None) -> np.ndarray:
    """Gradient with respect to every ``M[c, j, k]``; same shape as the matrices."""
    v = ExaminationFunction.parse(v)
    g = grad_exposure(m_all, prefs, v, comp)
    return g[:, :, None] * v.at_ranks(prefs.num_jobs)[None, None, :]


def linear_oracle(gradient_block: np.ndarray) -> np.ndarray:
    """Permutation maximising ``<gradient_block, P>``, as a ranking (ranking[k] = job at k)."""
    rows, cols = linear_sum_assignment(gradient_block, maximize=True)
    ranking = np.empty(len(rows), dtype=np.int64)
    ranking[cols] = rows
    return ranking


def rank_one_oracle(job_gradient: np.ndarray) -> np.ndarray:
    """Same optimum as ``linear_oracle(outer(job_gradient, v))`` for non-increasing v.

    By the rearrangement inequality the best permutation puts the job with the
    largest exposure gradient at the top.
    """
    return descending_order(job_gradient, axis=-1)


@dataclass(frozen=True, eq=False)
class BvnDecomposition:
    weights: np.ndarray
    permutations: np.ndarray  # (terms, n); permutations[t, k] = job at position k

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "permutations", np.asarray(self.permutations, dtype=np.int64))

    @property
    def terms(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.weights.tolist(), self.permutations))

    def __len__(self) -> int:
        return len(self.weights)

    def reconstruct(self) -> np.ndarray:
        n = self.permutations.shape[1]
        m = np.zeros((n, n))
        for w, perm in zip(self.weights, self.permutations):
            m[perm, np.arange(n)] += w
        return m

    def to_json(self) -> dict:
        return {"terms": [{"weight": float(w), "permutation": p.tolist()} for w, p in self.terms]}

    @classmethod
    def from_json(cls, obj: dict) -> "BvnDecomposition":
        terms = obj["terms"]
        return cls([t["weight"] for t in terms], [t["permutation"] for t in terms])


def birkhoff_bound(n: int) -> int:
    return (n - 1) ** 2 + 1


def bvn_decompose(m: np.ndarray, eps: float = 1e-12) -> BvnDecomposition:
    """Greedy Birkhoff-von Neumann decomposition.

    Repeatedly picks a perfect matching inside the support ``{m > eps}``
    (the one maximising the product of its entries), peels off the smallest
    matched entry, and stops when the leftover mass drops below ``eps``.
    """
    r = np.array(m, dtype=float)
    n = r.shape[0]
    if r.ndim != 2 or r.shape[1] != n:
        raise ValueError("expected a square matrix")
    check = max(eps, 1e-9)
    if (
        np.any(r < -check)
        or np.max(np.abs(r.sum(axis=0) - 1)) > check
        or np.max(np.abs(r.sum(axis=1) - 1)) > check
    ):
        raise InfeasibleMatrixError("matrix is not doubly stochastic")

    weights, perms = [], []
    remaining = 1.0
    cols = np.arange(n)
    while remaining > eps:
        support = r > eps
        if not support.any():
            break
        with np.errstate(divide="ignore"):
            cost = np.where(support, -np.log(np.where(support, r, 1.0)), np.inf)
        try:
            rows, assigned = linear_sum_assignment(cost)
        except ValueError as exc:
            raise InfeasibleMatrixError(
                f"no perfect matching on the support with {remaining:.3g} mass left; "
                "the matrix is not doubly stochastic"
            ) from exc
        w = float(r[rows, assigned].min())
        r[rows, assigned] -= w
        ranking = np.empty(n, dtype=np.int64)
        ranking[assigned] = rows
        weights.append(w)
        perms.append(ranking)
        remaining -= w
    if not weights:
        raise InfeasibleMatrixError("matrix has no mass above eps")
    wts = np.asarray(weights)
    # residual below eps is dropped; renormalise what was peeled off
    return BvnDecomposition(wts / wts.sum(), np.asarray(perms).reshape(len(weights), n))


def sample_ranking(decomp: BvnDecomposition, rng: np.random.Generator) -> np.ndarray:
    """Draw one term's permutation with probability proportional to its weight."""
    cum = np.cumsum(decomp.weights)
    t = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return decomp.permutations[min(t, len(cum) - 1)]


def _mixture_decomposition(
    n: int, uniform_weight: float, step_weights: Sequence[float], rankings: Sequence[np.ndarray]
) -> BvnDecomposition:
    """Decomposition of ``uniform_weight * J/n + sum_t w_t P_t`` with duplicates merged.

    The uniform matrix is the average of the n cyclic shifts.
    """
    acc: dict[tuple, float] = {}
    if uniform_weight > 0:
        shifts = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
        for row in shifts.tolist():
            key = tuple(row)
            acc[key] = acc.get(key, 0.0) + uniform_weight / n
    for w, r in zip(step_weights, np.asarray(rankings).tolist()):
        key = tuple(r)
        acc[key] = acc.get(key, 0.0) + w
    keys = list(acc)
    wts = np.array([acc[k] for k in keys])
    return BvnDecomposition(wts / wts.sum(), np.array(keys, dtype=np.int64).reshape(len(keys), n))


def solve_sw(
    prefs: PreferenceMatrices,
    config: SWConfig = SWConfig(),
    trace: list | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> StochasticPolicy:
    """Frank-Wolfe with a constant step over per-candidate Birkhoff polytopes.

    Starts from the uniform matrix; each step solves one exact assignment per
    candidate against the gradient, then blends ``M <- (1-eta) M + eta S``.
    The returned policy carries the exact vertex mixture produced along the
    way as its Birkhoff decompositions.  If ``trace`` is a list, the objective
    after every step is appended to it.
    """
    v = config.examination
    n_c, n_j = prefs.shape
    eta = float(config.eta)
    comp = Competition(prefs.p_jc)
    vr = v.at_ranks(n_j)
    m = np.full((n_c, n_j, n_j), 1.0 / n_j)
    chosen = np.empty((config.T, n_c, n_j), dtype=np.int64)
    positions = np.arange(n_j)
    cand = np.arange(n_c)[:, None]

    for t in range(config.T):
        g = grad_exposure(m, prefs, v, comp)
        if config.lmo == "sort":
            chosen[t] = rank_one_oracle(g)
        else:
            for c in range(n_c):
                chosen[t, c] = linear_oracle(np.outer(g[c], vr))
        m *= 1.0 - eta
        m[cand, chosen[t], positions[None, :]] += eta
        if trace is not None:
            val = approx_sw(m, prefs, v, comp)
            trace.append(val)
            log.debug("frank-wolfe step %d: approx_sw=%.6f", t + 1, val)
        if callback is not None:
            callback(t, m)

    uniform_w = (1.0 - eta) ** config.T
    step_w = [eta * (1.0 - eta) ** (config.T - 1 - t) for t in range(config.T)]
    decomps = []
    bound = birkhoff_bound(n_j)
    for c in range(n_c):
        d = _mixture_decomposition(n_j, uniform_w, step_w, chosen[:, c])
        if len(d) > bound:
            d = bvn_decompose(m[c])
        decomps.append(d)
    return StochasticPolicy(m, decompositions=tuple(decomps))


def decompose_policy(policy: StochasticPolicy, eps: float = 1e-12) -> tuple[BvnDecomposition, ...]:
    if policy.decompositions is not None:
        return policy.decompositions
    return tuple(bvn_decompose(mc, eps) for mc in policy.matrices)
