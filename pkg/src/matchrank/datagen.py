"""Synthetic two-sided markets with tunable crowding.

Scores mix a shared popularity ramp with idiosyncratic uniform noise::

    p_cj = lam * pop_job[j]       + (1 - lam) * noise_cj
    p_jc = lam * pop_candidate[c] + (1 - lam) * noise_jc

where low indices are the most popular (ramp from 1 down to 0).

Randomness comes from numpy's Philox counter-based generator.  The seed is
expanded with ``SeedSequence(seed).spawn(2)`` into two independent substreams,
the first for the candidate-side noise and the second for the employer side.
Changing this scheme changes every generated market, so it is fixed here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import PreferenceMatrices


@dataclass(frozen=True)
class SyntheticConfig:
    n: int
    lam: float
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam!r}")

    @property
    def num_jobs(self) -> int:
        return int(self.n)

    @property
    def num_candidates(self) -> int:
        # 1.5 n rounded half up
        return (3 * int(self.n) + 1) // 2


def popularity(size: int) -> np.ndarray:
    """Linear ramp ``1 - k/(size-1)`` for k = 0..size-1; a single user gets 1."""
    if size == 1:
        return np.ones(1)
    return 1.0 - np.arange(size) / (size - 1)


def make_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    cand, emp = ss.spawn(2)
    return np.random.Generator(np.random.Philox(cand)), np.random.Generator(np.random.Philox(emp))


def generate_market(config: SyntheticConfig) -> PreferenceMatrices:
    n_c, n_j = config.num_candidates, config.num_jobs
    lam = float(config.lam)
    cand_rng, emp_rng = make_streams(config.seed)
    noise_cj = cand_rng.random((n_c, n_j))
    noise_jc = emp_rng.random((n_j, n_c))
    p_cj = lam * popularity(n_j)[None, :] + (1.0 - lam) * noise_cj
    p_jc = lam * popularity(n_c)[None, :] + (1.0 - lam) * noise_jc
    # guard against 1 + tiny rounding excursions of the convex combination
    return PreferenceMatrices(np.clip(p_cj, 0.0, 1.0), np.clip(p_jc, 0.0, 1.0))
