"""Shared market types, examination functions and file formats.

Conventions used throughout the package:

* indices are 0-based (candidates ``c``, jobs/employers ``j``, positions ``k``);
* every descending sort breaks ties by ascending index (``descending_order``);
* ranks handed to an examination function are 1-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DomainError

ArrayLike = Union[float, Sequence[float], np.ndarray]

_LN2 = math.log(2.0)

EXAMINATION_KINDS = ("inv", "log", "exp", "table")


def descending_order(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Indices sorting ``scores`` descending, ties by ascending index.

    A stable sort of the negated scores gives exactly this order.
    """
    return np.argsort(-np.asarray(scores, dtype=float), axis=axis, kind="stable")


@dataclass(frozen=True)
class ExaminationFunction:
    """Position-based attention curve ``v``.

    ``inv``: 1/x, ``log``: 1/log2(x + 1), ``exp``: exp(1 - x), ``table``:
    explicit probabilities for ranks 1, 2, ... (linearly interpolated between
    ranks, zero past the end of the table).
    """

    kind: str
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in EXAMINATION_KINDS:
            raise ValueError(f"unknown examination kind {self.kind!r}")
        if self.kind == "table":
            if not self.table:
                raise ValueError("table examination needs a non-empty table")
            t = np.asarray(self.table, dtype=float)
            if np.any(t < 0) or np.any(t > 1):
                raise ValueError("table entries must lie in [0, 1]")
            if np.any(np.diff(t) > 0):
                raise ValueError("table entries must be non-increasing")
            object.__setattr__(self, "table", tuple(float(x) for x in t))
        elif self.table is not None:
            raise ValueError(f"kind {self.kind!r} takes no table")

    @classmethod
    def parse(cls, spec: "str | ExaminationFunction") -> "ExaminationFunction":
        if isinstance(spec, ExaminationFunction):
            return spec
        return cls(spec)

    @property
    def name(self) -> str:
        return self.kind

    @property
    def differentiable(self) -> bool:
        return self.kind != "table"

    def __call__(self, x: ArrayLike):
        return self.value(x)

    def value(self, x: ArrayLike):
        """Evaluate ``v`` at real arguments ``x >= 1``."""
        arr = np.asarray(x, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < 1):
            raise DomainError(f"examination function is defined for x >= 1, got {x!r}")
        if self.kind == "inv":
            out = 1.0 / arr
        elif self.kind == "log":
            out = _LN2 / np.log1p(arr)
        elif self.kind == "exp":
            out = np.exp(1.0 - arr)
        else:
            out = self._table_value(arr)
        return float(out) if out.ndim == 0 else out

    def _table_value(self, arr: np.ndarray) -> np.ndarray:
        # pad with a trailing zero so ranks past the table interpolate down to 0
        t = np.append(np.asarray(self.table), 0.0)
        lo = np.floor(arr).astype(np.int64)
        frac = arr - lo
        lo_idx = np.minimum(lo - 1, len(t) - 1)
        hi_idx = np.minimum(lo, len(t) - 1)
        return (1.0 - frac) * t[lo_idx] + frac * t[hi_idx]

    def derivative(self, x: ArrayLike):
        """dv/dx for the closed-form kinds."""
        if not self.differentiable:
            raise NotImplementedError("table examination functions have no derivative")
        arr = np.asarray(x, dtype=float)
        if np.any(arr < 1):
            raise DomainError(f"examination function is defined for x >= 1, got {x!r}")
        if self.kind == "inv":
            out = -1.0 / arr**2
        elif self.kind == "log":
            lg = np.log1p(arr)
            out = -_LN2 / ((1.0 + arr) * lg * lg)
        else:
            out = -np.exp(1.0 - arr)
        return float(out) if out.ndim == 0 else out

    def at_ranks(self, n: int) -> np.ndarray:
        """``[v(1), ..., v(n)]``."""
        return np.asarray(self.value(np.arange(1, n + 1, dtype=float)), dtype=float).reshape(n)

    def to_json(self):
        if self.kind == "table":
            return {"kind": "table", "table": list(self.table)}
        return self.kind

    @classmethod
    def from_json(cls, obj) -> "ExaminationFunction":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj["kind"], tuple(obj["table"]) if obj.get("table") is not None else None)


def examination_value(v: "ExaminationFunction | str", x: float) -> float:
    return ExaminationFunction.parse(v).value(x)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PreferenceMatrices:
    """Unilateral preference scores of both market sides.

    ``p_cj[c, j]`` is candidate ``c``'s score for job ``j`` and ``p_jc[j, c]``
    is employer ``j``'s score for candidate ``c``.
    """

    p_cj: np.ndarray
    p_jc: np.ndarray

    def __post_init__(self):
        p_cj, p_jc = _frozen(self.p_cj), _frozen(self.p_jc)
        if p_cj.ndim != 2 or p_jc.ndim != 2 or p_cj.size == 0:
            raise ValueError("preference matrices must be non-empty 2-D arrays")
        if p_jc.shape != p_cj.shape[::-1]:
            raise ValueError(
                f"p_cj is {p_cj.shape} but p_jc is {p_jc.shape}; expected {p_cj.shape[::-1]}"
            )
        for name, m in (("p_cj", p_cj), ("p_jc", p_jc)):
            if not np.all(np.isfinite(m)) or np.any(m < 0) or np.any(m > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        object.__setattr__(self, "p_cj", p_cj)
        object.__setattr__(self, "p_jc", p_jc)

    @property
    def num_candidates(self) -> int:
        return self.p_cj.shape[0]

    @property
    def num_jobs(self) -> int:
        return self.p_cj.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.p_cj.shape

    def mutual(self) -> np.ndarray:
        """``p_cj * p_jc^T``, candidate-major."""
        return self.p_cj * self.p_jc.T

    def to_json(self) -> dict:
        return {
            "num_candidates": self.num_candidates,
            "num_jobs": self.num_jobs,
            "p_cj": self.p_cj.tolist(),
            "p_jc": self.p_jc.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PreferenceMatrices":
        prefs = cls(np.array(obj["p_cj"], dtype=float), np.array(obj["p_jc"], dtype=float))
        if "num_candidates" in obj and obj["num_candidates"] != prefs.num_candidates:
            raise ValueError("num_candidates does not match p_cj")
        if "num_jobs" in obj and obj["num_jobs"] != prefs.num_jobs:
            raise ValueError("num_jobs does not match p_cj")
        return prefs


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """One ranked list of jobs per candidate; ``rankings[c, k]`` is the job at position k."""

    rankings: np.ndarray

    def __post_init__(self):
        r = np.array(self.rankings, dtype=np.int64)
        if r.ndim != 2 or r.size == 0:
            raise ValueError("rankings must be a non-empty 2-D integer array")
        expected = np.arange(r.shape[1])
        if not np.array_equal(np.sort(r, axis=1), np.broadcast_to(expected, r.shape)):
            raise ValueError("every ranking must be a permutation of the job indices")
        r.setflags(write=False)
        object.__setattr__(self, "rankings", r)

    @property
    def num_candidates(self) -> int:
        return self.rankings.shape[0]

    @property
    def num_jobs(self) -> int:
        return self.rankings.shape[1]

    def positions(self) -> np.ndarray:
        """``positions[c, j]``: 0-based position of job j in candidate c's list."""
        pos = np.empty_like(self.rankings)
        rows = np.arange(self.num_candidates)[:, None]
        pos[rows, self.rankings] = np.arange(self.num_jobs)[None, :]
        return pos

    def as_matrices(self) -> np.ndarray:
        """Permutation matrices with ``M[c, j, k] = 1`` iff job j sits at position k."""
        c, j = self.rankings.shape
        m = np.zeros((c, j, j))
        m[np.arange(c)[:, None], self.rankings, np.arange(j)[None, :]] = 1.0
        return m

    def to_json(self) -> dict:
        return {"type": "deterministic", "rankings": self.rankings.tolist()}


@dataclass(frozen=True, eq=False)
class StochasticPolicy:
    """Per-candidate doubly stochastic matrices; ``matrices[c, j, k]`` = P(job j at position k).

    ``decompositions`` optionally carries an already-known Birkhoff decomposition
    per candidate (e.g. the vertex mixture produced by Frank-Wolfe), which saves
    recomputing it before simulation.
    """

    matrices: np.ndarray
    decompositions: tuple | None = field(default=None, repr=False)

    TOL = 1e-9

    def __post_init__(self):
        m = _frozen(self.matrices)
        if m.ndim != 3 or m.shape[1] != m.shape[2] or m.size == 0:
            raise ValueError("matrices must have shape (num_candidates, n, n)")
        if np.any(m < -self.TOL) or np.any(m > 1 + self.TOL):
            raise ValueError("doubly stochastic entries must lie in [0, 1]")
        if np.max(np.abs(m.sum(axis=2) - 1)) > self.TOL or np.max(np.abs(m.sum(axis=1) - 1)) > self.TOL:
            raise ValueError("every matrix must have unit row and column sums")
        object.__setattr__(self, "matrices", m)

    @property
    def num_candidates(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_jobs(self) -> int:
        return self.matrices.shape[1]

    def to_json(self) -> dict:
        obj = {"type": "stochastic", "matrices": self.matrices.tolist()}
        if self.decompositions is not None:
            obj["decompositions"] = [d.to_json() for d in self.decompositions]
        return obj


Policy = Union[DeterministicPolicy, StochasticPolicy]


def policy_from_json(obj: dict) -> Policy:
    kind = obj.get("type")
    if kind == "deterministic":
        return DeterministicPolicy(np.array(obj["rankings"], dtype=np.int64))
    if kind == "stochastic":
        matrices = np.array(obj["matrices"], dtype=float)
        decomps = None
        if obj.get("decompositions") is not None:
            from .sw import BvnDecomposition  # sw imports this module

            decomps = tuple(BvnDecomposition.from_json(d) for d in obj["decompositions"])
            if len(decomps) != len(matrices) or any(
                np.max(np.abs(d.reconstruct() - mc)) > StochasticPolicy.TOL for d, mc in zip(decomps, matrices)
            ):
                raise ValueError("stored decompositions do not reconstruct the policy matrices")
        return StochasticPolicy(matrices, decomps)
    raise ValueError(f"unknown policy type {kind!r}")


def check_compatible(policy: Policy, prefs: PreferenceMatrices) -> None:
    if (policy.num_candidates, policy.num_jobs) != prefs.shape:
        raise ValueError(
            f"policy covers {policy.num_candidates}x{policy.num_jobs} but market is "
            f"{prefs.num_candidates}x{prefs.num_jobs}"
        )


def write_json(obj, path: "str | Path") -> None:
    # json emits shortest round-trip float reprs, so values survive reload bit-exactly
    Path(path).write_text(json.dumps(obj) + "\n")


def read_json(path: "str | Path"):
    return json.loads(Path(path).read_text())


def load_market(path) -> PreferenceMatrices:
    return PreferenceMatrices.from_json(read_json(path))


def save_market(prefs: PreferenceMatrices, path) -> None:
    write_json(prefs.to_json(), path)


def load_policy(path) -> Policy:
    return policy_from_json(read_json(path))


def save_policy(policy: Policy, path) -> None:
    write_json(policy.to_json(), path)


def is_permutation(row: Iterable[int], n: int) -> bool:
    return sorted(row) == list(range(n))
