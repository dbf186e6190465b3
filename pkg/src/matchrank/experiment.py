"""Grid experiments over market size, crowding and ranking method, written as long-form CSV.

Seeds form a hash chain from the base seed so any single cell can be rerun on
its own::

    market_seed = derive_seed(base_seed, "market", n, lambda, repeat)
    sim_seed    = derive_seed(market_seed, "sim")

``derive_seed`` is the first 8 bytes (big-endian, top bit cleared) of the
BLAKE2b digest of the ``/``-joined ``repr`` of its arguments.  Every method in
a cell is evaluated with the same ``sim_seed`` (common random numbers).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import SyntheticConfig, generate_market
from .market import ExaminationFunction
from .policies import naive_policy, reciprocal_policy
from .simulator import estimate_sw
from .sw import SWConfig, memory_bytes, solve_sw
from .tu import TUConfig, solve_ipfp, tu_policy

log = logging.getLogger(__name__)

COLUMNS = [
    "method", "n", "lambda", "beta", "assumed_v", "true_v", "repeat", "seed",
    "sw_mean", "sw_stderr", "gini_candidates", "gini_employers",
    "iterations", "converged", "wall_ms", "status",
]

DEFAULT_SW_MEMORY_BUDGET = 512 * 2**20


def derive_seed(*parts) -> int:
    digest = hashlib.blake2b("/".join(repr(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") & (2**63 - 1)


@dataclass(frozen=True)
class Method:
    name: str  # naive | reciprocal | tu | sw
    beta: float | None = None
    assumed_v: str | None = None

    @classmethod
    def parse(cls, text: str) -> "Method":
        name, _, arg = text.strip().partition(":")
        name = name.lower()
        if name in ("naive", "reciprocal"):
            if arg:
                raise ValueError(f"method {name!r} takes no argument")
            return cls(name)
        if name == "tu":
            return cls("tu", beta=float(arg) if arg else 1.0)
        if name == "sw":
            v = arg or "inv"
            ExaminationFunction.parse(v)
            return cls("sw", assumed_v=v)
        raise ValueError(f"unknown method {text!r}")

    @property
    def label(self) -> str:
        if self.name == "tu":
            return f"tu:{self.beta:g}"
        if self.name == "sw":
            return f"sw:{self.assumed_v}"
        return self.name


@dataclass
class ExperimentSpec:
    sizes: list = field(default_factory=lambda: [100])
    lambdas: list = field(default_factory=lambda: [0.5])
    true_v: list = field(default_factory=lambda: ["inv"])
    methods: list = field(default_factory=lambda: ["naive", "reciprocal", "tu:1.0", "sw:inv"])
    repeats: int = 10
    sims_per_eval: int = 10_000
    base_seed: int = 0
    tu_tol: float = 1e-9
    tu_max_iters: int = 100_000
    sw_T: int = 50
    sw_eta: float = 0.2
    sw_memory_budget: int = DEFAULT_SW_MEMORY_BUDGET
    timing: bool = True
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.true_v, str):
            self.true_v = [self.true_v]
        if isinstance(self.methods, str):
            self.methods = [m for m in self.methods.split(",") if m]
        if not self.methods:
            raise ValueError("an experiment needs at least one method")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if not self.sizes or not self.lambdas or not self.true_v:
            raise ValueError("sizes, lambdas and true_v must be non-empty")
        for m in self.methods:
            Method.parse(m)
        for v in self.true_v:
            ExaminationFunction.parse(v)

    @property
    def parsed_methods(self) -> list[Method]:
        return [Method.parse(m) for m in self.methods]

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        return asdict(self)


def _blank_row(method: Method, n, lam, true_v, repeat, seed) -> dict:
    row = dict.fromkeys(COLUMNS, "")
    row.update(
        method=method.name,
        n=n,
        **{"lambda": lam},
        beta="" if method.beta is None else method.beta,
        assumed_v=method.assumed_v or "",
        true_v=true_v,
        repeat=repeat,
        seed=seed,
    )
    return row


def _compute_policy(method: Method, prefs, spec: ExperimentSpec):
    """Returns (policy, extras) or raises."""
    if method.name == "naive":
        return naive_policy(prefs), {}
    if method.name == "reciprocal":
        return reciprocal_policy(prefs), {}
    if method.name == "tu":
        eq = solve_ipfp(prefs, TUConfig(method.beta, spec.tu_max_iters, spec.tu_tol))
        # an unconverged iterate is still ranked and reported, flagged in the row
        return tu_policy(eq, force=True), {"iterations": eq.iterations, "converged": eq.converged}
    if method.name == "sw":
        return solve_sw(prefs, SWConfig(spec.sw_T, spec.sw_eta, method.assumed_v)), {}
    raise ValueError(method.name)


def run_cell(spec: ExperimentSpec, n: int, lam: float, repeat: int) -> list[dict]:
    """All methods x true examination functions for one generated market."""
    market_seed = derive_seed(spec.base_seed, "market", n, float(lam), repeat)
    sim_seed = derive_seed(market_seed, "sim")
    rows = []
    try:
        prefs = generate_market(SyntheticConfig(n, lam, market_seed))
    except Exception as exc:  # noqa: BLE001 - recorded, not raised
        for method in spec.parsed_methods:
            for tv in spec.true_v:
                row = _blank_row(method, n, lam, tv, repeat, market_seed)
                row["status"] = f"error: {exc}"
                rows.append(row)
        return rows

    for method in spec.parsed_methods:
        base = {tv: _blank_row(method, n, lam, tv, repeat, market_seed) for tv in spec.true_v}
        if method.name == "sw" and memory_bytes(*prefs.shape) > spec.sw_memory_budget:
            for row in base.values():
                row["status"] = "infeasible"
            rows.extend(base.values())
            continue
        try:
            t0 = time.perf_counter()
            policy, extras = _compute_policy(method, prefs, spec)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            for tv, row in base.items():
                est = estimate_sw(policy, prefs, tv, spec.sims_per_eval, sim_seed)
                row.update(
                    sw_mean=est.mean,
                    sw_stderr=est.stderr,
                    gini_candidates=est.gini_candidates,
                    gini_employers=est.gini_employers,
                    wall_ms=round(wall_ms, 3) if spec.timing else "",
                    status="ok",
                    **extras,
                )
        except Exception as exc:  # noqa: BLE001 - recorded, not raised
            log.exception("cell n=%s lambda=%s repeat=%s method=%s failed", n, lam, repeat, method.label)
            for row in base.values():
                row["status"] = f"error: {exc}"
        rows.extend(base.values())
    return rows


def _aggregate(spec: ExperimentSpec, rows: list[dict]) -> list[dict]:
    out = []
    keys = []
    groups: dict = {}
    for row in rows:
        key = (row["method"], row["beta"], row["assumed_v"], row["true_v"], row["n"], row["lambda"])
        if key not in groups:
            keys.append(key)
            groups[key] = []
        groups[key].append(row)
    for key in keys:
        grp = groups[key]
        ok = [r for r in grp if r["status"] == "ok"]
        agg = dict(grp[0])
        agg.update(repeat="all", seed=spec.base_seed)
        if not ok:
            agg.update({c: "" for c in ("sw_mean", "sw_stderr", "gini_candidates", "gini_employers",
                                         "iterations", "converged", "wall_ms")})
            agg["status"] = grp[0]["status"]
            out.append(agg)
            continue
        means = np.array([r["sw_mean"] for r in ok], dtype=float)
        agg["sw_mean"] = float(means.mean())
        agg["sw_stderr"] = float(means.std(ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else ok[0]["sw_stderr"]
        agg["gini_candidates"] = float(np.mean([r["gini_candidates"] for r in ok]))
        agg["gini_employers"] = float(np.mean([r["gini_employers"] for r in ok]))
        iters = [r["iterations"] for r in ok if r["iterations"] != ""]
        agg["iterations"] = max(iters) if iters else ""
        conv = [r["converged"] for r in ok if r["converged"] != ""]
        agg["converged"] = all(conv) if conv else ""
        walls = [r["wall_ms"] for r in ok if r["wall_ms"] != ""]
        agg["wall_ms"] = round(float(np.mean(walls)), 3) if walls else ""
        agg["status"] = "ok" if len(ok) == len(grp) else f"partial: {len(ok)}/{len(grp)} ok"
        out.append(agg)
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Per-repeat rows for every (n, lambda, repeat, method, true_v), then aggregate rows."""
    cells = [(spec, n, lam, r) for n in spec.sizes for lam in spec.lambdas for r in range(spec.repeats)]
    if spec.threads == 1 or len(cells) == 1:
        results = [_run_cell_args(c) for c in cells]
    else:
        workers = None if spec.threads == 0 else spec.threads
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map() yields in submission order, so output order is deterministic
            results = list(pool.map(_run_cell_args, cells))
    rows = [row for cell_rows in results for row in cell_rows]
    return rows + _aggregate(spec, rows)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def write_csv(rows: list[dict], path) -> None:
    Path(path).write_text(to_csv(rows))


def aggregate_rows(rows: list[dict]) -> list[dict]:
    return [r for r in rows if r["repeat"] == "all"]


def lookup(rows: list[dict], method: str, true_v: str = "inv", n=None, lam=None,
           beta=None, assumed_v=None) -> dict:
    """The aggregate row matching the given filters (exactly one must match)."""
    hits = [
        r for r in aggregate_rows(rows)
        if r["method"] == method and r["true_v"] == true_v
        and (n is None or r["n"] == n) and (lam is None or r["lambda"] == lam)
        and (beta is None or r["beta"] == beta) and (assumed_v is None or r["assumed_v"] == assumed_v)
    ]
    if len(hits) != 1:
        raise KeyError(f"{len(hits)} aggregate rows match method={method} true_v={true_v} beta={beta} assumed_v={assumed_v}")
    return hits[0]
