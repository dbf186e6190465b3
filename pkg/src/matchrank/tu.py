"""Transferable-utility equilibrium ranking (Choo-Siow model with Gumbel noise).

With Gumbel(0, beta) preference noise the equilibrium matching has the form

    mu[c, j] = K[c, j] * A[c] * B[j],   K = exp((p_cj + p_jc^T) / (2 beta))

where ``A[c]**2`` and ``B[j]**2`` are the outside-option masses.  The row and
column marginal constraints give ``A**2 + A * (K @ B) = 1`` and
``B**2 + B * (K^T @ A) = 1``; each side is solved in closed form given the
other and the two are alternated (IPFP) until both settle.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEquilibriumError, DomainError, NotConvergedError, NumericalOverflowError
from .market import DeterministicPolicy, PreferenceMatrices, descending_order

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TUConfig:
    beta: float = 1.0
    max_iters: int = 100_000
    tol: float = 1e-9
    # "stable": 2 / (s + sqrt(s^2 + 4)); "direct": sqrt(1 + (s/2)^2) - s/2, which
    # loses digits to cancellation once s is large (small beta)
    update: str = "stable"

    def __post_init__(self):
        if self.update not in ("stable", "direct"):
            raise ValueError(f"update must be 'stable' or 'direct', got {self.update!r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")


@dataclass(frozen=True, eq=False)
class EquilibriumMatching:
    mu: np.ndarray
    mu_c0: np.ndarray
    mu_0j: np.ndarray
    beta: float
    iterations: int
    residual: float
    converged: bool
    # per-sweep max constraint violation; not serialized
    history: tuple = field(default=(), repr=False)

    @property
    def A(self) -> np.ndarray:
        return np.sqrt(self.mu_c0)

    @property
    def B(self) -> np.ndarray:
        return np.sqrt(self.mu_0j)

    def marginal_violation(self) -> float:
        rows = self.mu_c0 + self.mu.sum(axis=1) - 1.0
        cols = self.mu_0j + self.mu.sum(axis=0) - 1.0
        return float(max(np.max(np.abs(rows)), np.max(np.abs(cols))))

    def to_json(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "mu_c0": self.mu_c0.tolist(),
            "mu_0j": self.mu_0j.tolist(),
            "beta": float(self.beta),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EquilibriumMatching":
        return cls(
            mu=np.array(obj["mu"], dtype=float),
            mu_c0=np.array(obj["mu_c0"], dtype=float),
            mu_0j=np.array(obj["mu_0j"], dtype=float),
            beta=float(obj["beta"]),
            iterations=int(obj["iterations"]),
            residual=float(obj["residual"]),
            converged=bool(obj["converged"]),
        )


def kernel(prefs: PreferenceMatrices, beta: float) -> np.ndarray:
    """``exp((p_cj + p_jc^T) / (2 beta))``; fails fast on overflow."""
    with np.errstate(over="ignore"):
        k = np.exp((prefs.p_cj + prefs.p_jc.T) / (2.0 * beta))
    if not np.all(np.isfinite(k)):
        raise NumericalOverflowError(
            f"exp((p_cj + p_jc) / (2 * beta)) overflows for beta={beta!r}; "
            "use a larger beta or rescale the preference scores"
        )
    return k


def _outside_root(s: np.ndarray) -> np.ndarray:
    # positive root of a**2 + s*a - 1 = 0, written to avoid cancellation at large s
    return 2.0 / (s + np.sqrt(s * s + 4.0))


def _outside_root_direct(s: np.ndarray) -> np.ndarray:
    half = 0.5 * s
    return np.sqrt(1.0 + half * half) - half


def _row_sums(k: np.ndarray, w: np.ndarray) -> np.ndarray:
    # elementwise product + numpy pairwise sum: fixed reduction order, unlike BLAS gemv
    return (k * w[None, :]).sum(axis=1)


def solve_ipfp(prefs: PreferenceMatrices, config: TUConfig = TUConfig()) -> EquilibriumMatching:
    """Alternate closed-form updates of ``A`` (all candidates) then ``B`` (all jobs).

    Stops once, within one sweep, the largest change of any ``A[c]`` or
    ``B[j]`` and the largest violation of either marginal constraint are both
    below ``config.tol``.  Hitting ``max_iters`` returns the last iterate with
    ``converged=False``.
    """
    root = _outside_root if config.update == "stable" else _outside_root_direct
    k = kernel(prefs, config.beta)
    kt = np.ascontiguousarray(k.T)
    a = np.ones(prefs.num_candidates)
    b = np.ones(prefs.num_jobs)
    history = []
    converged = False
    residual = math.inf
    it = 0
    for it in range(1, int(config.max_iters) + 1):
        s_a = _row_sums(k, b)
        a_new = root(s_a)
        s_b = _row_sums(kt, a_new)
        b_new = root(s_b)
        change = max(np.max(np.abs(a_new - a)), np.max(np.abs(b_new - b)))
        a, b = a_new, b_new
        row_err = np.max(np.abs(a * a + a * _row_sums(k, b) - 1.0))
        col_err = np.max(np.abs(b * b + b * s_b - 1.0))
        residual = float(max(row_err, col_err))
        history.append(residual)
        if change < config.tol and residual < config.tol:
            converged = True
            break
    if not converged:
        log.warning("IPFP did not converge in %d sweeps (beta=%g, residual=%.3g)", it, config.beta, residual)
    mu = k * a[:, None] * b[None, :]
    return EquilibriumMatching(
        mu=mu,
        mu_c0=a * a,
        mu_0j=b * b,
        beta=float(config.beta),
        iterations=it,
        residual=residual,
        converged=converged,
        history=tuple(history),
    )


def _require_converged(eq: EquilibriumMatching, force: bool, what: str) -> None:
    if not eq.converged and not force:
        raise NotConvergedError(
            f"cannot build {what} from an unconverged equilibrium "
            f"(iterations={eq.iterations}, residual={eq.residual:.3g}); pass force=True to override"
        )


def tu_policy(eq: EquilibriumMatching, force: bool = False) -> DeterministicPolicy:
    """Rank jobs for each candidate by descending equilibrium mass ``mu[c, :]``."""
    _require_converged(eq, force, "a ranking")
    return DeterministicPolicy(descending_order(eq.mu, axis=1))


def recover_transfers(prefs: PreferenceMatrices, eq: EquilibriumMatching, force: bool = False) -> np.ndarray:
    """Transfers ``tau[c, j] = beta * ln(mu[c, j] / mu_c0[c]) - p_cj[c, j]``.

    These are the transfers at which the candidates' logit demand reproduces
    ``mu``; at equilibrium the employers' logit demand agrees with it too.
    """
    _require_converged(eq, force, "transfers")
    if np.any(eq.mu_c0 <= 0) or np.any(eq.mu <= 0):
        raise DegenerateEquilibriumError("zero outside-option or match mass; transfers are undefined")
    return eq.beta * (np.log(eq.mu) - np.log(eq.mu_c0)[:, None]) - prefs.p_cj


def _softmax_with_outside(utils: np.ndarray, axis: int) -> np.ndarray:
    # outside option has utility 0
    m = np.maximum(utils.max(axis=axis, keepdims=True), 0.0)
    e = np.exp(utils - m)
    return e / (np.exp(-m) + e.sum(axis=axis, keepdims=True))


def candidate_demand(prefs: PreferenceMatrices, tau: np.ndarray, beta: float) -> np.ndarray:
    """Logit choice probability of candidate c for job j, given transfers."""
    return _softmax_with_outside((prefs.p_cj + tau) / beta, axis=1)


def employer_demand(prefs: PreferenceMatrices, tau: np.ndarray, beta: float) -> np.ndarray:
    """Logit choice probability of employer j for candidate c (returned candidate-major)."""
    return _softmax_with_outside((prefs.p_jc.T - tau) / beta, axis=0)


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    candidate_vectors: np.ndarray
    job_vectors: np.ndarray
    beta: float

    @property
    def dim(self) -> int:
        return self.candidate_vectors.shape[1]

    def scores(self, candidate: int | None = None) -> np.ndarray:
        if candidate is None:
            return self.candidate_vectors @ self.job_vectors.T
        return self.job_vectors @ self.candidate_vectors[candidate]

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "beta": float(self.beta),
            "candidate_vectors": self.candidate_vectors.tolist(),
            "job_vectors": self.job_vectors.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EmbeddingSet":
        return cls(
            np.array(obj["candidate_vectors"], dtype=float),
            np.array(obj["job_vectors"], dtype=float),
            float(obj["beta"]),
        )


def build_embeddings(phi1, phi2, psi1, psi2, eq: EquilibriumMatching, check_samples: int = 32) -> EmbeddingSet:
    """Augment two-tower features so a plain dot product ranks like ``mu``.

    Candidate vector ``[phi1, phi2, beta*log(mu_c0), 1]`` and job vector
    ``[psi1, psi2, 1, beta*log(mu_0j)]`` have inner product
    ``2 * beta * log(mu[c, j])``.
    """
    phi1, phi2, psi1, psi2 = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (phi1, phi2, psi1, psi2))
    n_c, n_j = eq.mu.shape
    d = phi1.shape[1]
    if phi1.shape != (n_c, d) or phi2.shape != (n_c, d):
        raise DomainError(f"candidate features must both be {n_c}x{d}, got {phi1.shape} and {phi2.shape}")
    if psi1.shape != (n_j, d) or psi2.shape != (n_j, d):
        raise DomainError(f"job features must both be {n_j}x{d}, got {psi1.shape} and {psi2.shape}")

    if check_samples:
        # the features must reproduce the scores the equilibrium was solved on
        rng = np.random.default_rng(0)
        cs = rng.integers(0, n_c, size=check_samples)
        js = rng.integers(0, n_j, size=check_samples)
        implied = 2 * eq.beta * np.log(eq.mu[cs, js]) - eq.beta * (np.log(eq.mu_c0[cs]) + np.log(eq.mu_0j[js]))
        feats = np.einsum("id,id->i", phi1[cs], psi1[js]) + np.einsum("id,id->i", phi2[cs], psi2[js])
        if not np.allclose(feats, implied, rtol=1e-6, atol=1e-6):
            warnings.warn(
                "feature dot products do not reproduce the preference scores behind this equilibrium",
                RuntimeWarning,
                stacklevel=2,
            )

    beta = eq.beta
    cand = np.hstack([phi1, phi2, beta * np.log(eq.mu_c0)[:, None], np.ones((n_c, 1))])
    job = np.hstack([psi1, psi2, np.ones((n_j, 1)), beta * np.log(eq.mu_0j)[:, None]])
    return EmbeddingSet(cand, job, beta)


def top_k_by_dot(emb: EmbeddingSet, candidate: int, k: int) -> np.ndarray:
    """Exact maximum-inner-product scan; ties go to the lower job index."""
    n_j = emb.job_vectors.shape[0]
    if not 1 <= k <= n_j:
        raise DomainError(f"k must lie in [1, {n_j}], got {k}")
    if not 0 <= candidate < emb.candidate_vectors.shape[0]:
        raise DomainError(f"candidate index {candidate} out of range")
    return descending_order(emb.scores(candidate))[:k]


def exact_features(prefs: PreferenceMatrices):
    """Lossless (phi1, phi2, psi1, psi2) with ``phi1 . psi1 = p_cj`` and ``phi2 . psi2 = p_jc``.

    Dimension ``d = |J| + |C|``; useful when no learned two-tower model exists.
    """
    n_c, n_j = prefs.shape
    phi1 = np.hstack([prefs.p_cj, np.zeros((n_c, n_c))])
    psi1 = np.hstack([np.eye(n_j), np.zeros((n_j, n_c))])
    phi2 = np.hstack([np.zeros((n_c, n_j)), np.eye(n_c)])
    psi2 = np.hstack([np.zeros((n_j, n_j)), prefs.p_jc])
    return phi1, phi2, psi1, psi2
