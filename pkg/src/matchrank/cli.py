"""``matchrank`` command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 problem too large (size guard).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .datagen import SyntheticConfig, generate_market
from .errors import (
    DegenerateEquilibriumError,
    InfeasibleMatrixError,
    NotConvergedError,
    NumericalOverflowError,
    SizeGuardError,
)
from .experiment import ExperimentSpec, run_experiment, to_csv
from .market import ExaminationFunction, load_market, load_policy, read_json, save_market, save_policy, write_json
from .policies import naive_policy, reciprocal_policy
from .simulator import estimate_sw, exact_sw
from .sw import SWConfig, bvn_decompose, solve_sw
from .tu import EquilibriumMatching, TUConfig, build_embeddings, exact_features, solve_ipfp, tu_policy

log = logging.getLogger("matchrank")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _examination(text: str) -> ExaminationFunction:
    try:
        return ExaminationFunction.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _emit(args, obj, out=None):
    if out:
        write_json(obj, out)
    elif not args.quiet:
        print(json.dumps(obj))


def cmd_generate(args):
    prefs = generate_market(SyntheticConfig(args.n, args.lam, args.seed))
    save_market(prefs, args.out)
    log.info("wrote %dx%d market to %s", *prefs.shape, args.out)


def cmd_rank(args):
    prefs = load_market(args.market)
    policy = naive_policy(prefs) if args.method == "naive" else reciprocal_policy(prefs)
    save_policy(policy, args.out)


def cmd_solve_tu(args):
    prefs = load_market(args.market)
    eq = solve_ipfp(prefs, TUConfig(args.beta, args.max_iters, args.tol))
    if not eq.converged:
        print(
            f"warning: IPFP did not converge after {eq.iterations} sweeps "
            f"(residual {eq.residual:.3g}); writing the last iterate",
            file=sys.stderr,
        )
    write_json(eq.to_json(), args.out)
    if args.policy_out:
        save_policy(tu_policy(eq, force=True), args.policy_out)
    if not args.quiet:
        print(json.dumps({"iterations": eq.iterations, "residual": eq.residual, "converged": eq.converged}))


def cmd_embed(args):
    prefs = load_market(args.market)
    eq = EquilibriumMatching.from_json(read_json(args.eq))
    if eq.mu.shape != prefs.shape:
        raise UsageError(f"equilibrium is {eq.mu.shape} but market is {prefs.shape}")
    if args.features:
        f = read_json(args.features)
        feats = [np.asarray(f[k], dtype=float) for k in ("phi1", "phi2", "psi1", "psi2")]
    else:
        feats = exact_features(prefs)
    emb = build_embeddings(*feats, eq)
    write_json(emb.to_json(), args.out)


def cmd_solve_sw(args):
    prefs = load_market(args.market)
    policy = solve_sw(prefs, SWConfig(args.T, args.eta, args.v))
    save_policy(policy, args.out)


def cmd_bvn(args):
    policy = load_policy(args.policy)
    matrices = policy.as_matrices() if hasattr(policy, "as_matrices") else policy.matrices
    decomps = [bvn_decompose(m, args.eps) for m in matrices]
    write_json({"decompositions": [d.to_json() for d in decomps]}, args.out)


def cmd_simulate(args):
    prefs = load_market(args.market)
    policy = load_policy(args.policy)
    est = estimate_sw(policy, prefs, args.v, args.sims, args.seed)
    _emit(args, est.to_json(), args.out)


def cmd_exact_sw(args):
    prefs = load_market(args.market)
    policy = load_policy(args.policy)
    _emit(args, {"exact_sw": exact_sw(policy, prefs, args.v)}, args.out)


EXPERIMENT_FLAGS = {
    # flag dest -> ExperimentSpec field
    "sizes": "sizes",
    "lambdas": "lambdas",
    "true_v": "true_v",
    "methods": "methods",
    "repeats": "repeats",
    "sims": "sims_per_eval",
    "base_seed": "base_seed",
    "tu_tol": "tu_tol",
    "tu_max_iters": "tu_max_iters",
    "sw_T": "sw_T",
    "sw_eta": "sw_eta",
    "sw_memory_budget": "sw_memory_budget",
    "timing": "timing",
}


def cmd_experiment(args):
    config = read_json(args.config) if args.config else {}
    if not isinstance(config, dict):
        raise UsageError("experiment config must be a JSON object")
    for dest, key in EXPERIMENT_FLAGS.items():
        value = getattr(args, dest)
        if value is not None:
            config[key] = value
    if args.threads is not None:
        config["threads"] = args.threads
    spec = ExperimentSpec.from_json(config)
    text = to_csv(run_experiment(spec))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering each other
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes for experiments (0 = one per CPU)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only report errors")

    p = _Parser(prog="matchrank", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="generate a synthetic market")
    g.add_argument("--n", type=int, required=True, help="number of jobs (candidates = 1.5 n)")
    g.add_argument("--lambda", dest="lam", type=float, required=True, help="crowding in [0, 1]")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("rank", parents=[common], help="naive or reciprocal rankings")
    r.add_argument("--method", choices=["naive", "reciprocal"], required=True)
    r.add_argument("--market", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rank)

    t = sub.add_parser("solve-tu", parents=[common], help="TU equilibrium via IPFP")
    t.add_argument("--market", required=True)
    t.add_argument("--beta", type=float, default=1.0)
    t.add_argument("--tol", type=float, default=1e-9)
    t.add_argument("--max-iters", type=int, default=100_000)
    t.add_argument("--out", required=True, help="equilibrium JSON")
    t.add_argument("--policy-out", help="also write the TU ranking policy")
    t.set_defaults(func=cmd_solve_tu)

    e = sub.add_parser("embed", parents=[common], help="dot-product embeddings of an equilibrium")
    e.add_argument("--market", required=True)
    e.add_argument("--eq", required=True)
    e.add_argument("--features", help="JSON with phi1, phi2, psi1, psi2 (default: exact one-hot features)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    s = sub.add_parser("solve-sw", parents=[common], help="Frank-Wolfe social-welfare policy")
    s.add_argument("--market", required=True)
    s.add_argument("--v", type=_examination, default=ExaminationFunction("inv"))
    s.add_argument("--T", type=int, default=50)
    s.add_argument("--eta", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve_sw)

    b = sub.add_parser("bvn", parents=[common], help="Birkhoff-von Neumann decomposition of a policy")
    b.add_argument("--policy", required=True)
    b.add_argument("--eps", type=float, default=1e-12)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bvn)

    m = sub.add_parser("simulate", parents=[common], help="Monte-Carlo matches of a policy")
    m.add_argument("--market", required=True)
    m.add_argument("--policy", required=True)
    m.add_argument("--v", type=_examination, default=ExaminationFunction("inv"))
    m.add_argument("--sims", type=int, default=10_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_simulate)

    x = sub.add_parser("exact-sw", parents=[common], help="exact expected matches of a policy")
    x.add_argument("--market", required=True)
    x.add_argument("--policy", required=True)
    x.add_argument("--v", type=_examination, default=ExaminationFunction("inv"))
    x.add_argument("--out")
    x.set_defaults(func=cmd_exact_sw)

    xp = sub.add_parser("experiment", parents=[common], help="grid experiment to long-form CSV")
    xp.add_argument("--config", help="JSON experiment spec; flags below override it")
    xp.add_argument("--sizes", type=_csv_list(int))
    xp.add_argument("--lambdas", type=_csv_list(float))
    xp.add_argument("--true-v", type=_csv_list(str))
    xp.add_argument("--methods", type=_csv_list(str), help="e.g. naive,reciprocal,tu:1.0,sw:inv")
    xp.add_argument("--repeats", type=int)
    xp.add_argument("--sims", type=int)
    xp.add_argument("--base-seed", type=int)
    xp.add_argument("--tu-tol", type=float)
    xp.add_argument("--tu-max-iters", type=int)
    xp.add_argument("--sw-T", type=int)
    xp.add_argument("--sw-eta", type=float)
    xp.add_argument("--sw-memory-budget", type=int, help="bytes")
    xp.add_argument("--timing", dest="timing", action="store_true", default=None)
    xp.add_argument("--no-timing", dest="timing", action="store_false",
                    help="leave wall_ms empty so reruns are byte-identical")
    xp.add_argument("--out", help="CSV path (default: stdout)")
    xp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already mapped to EXIT_USAGE
        return int(exc.code or 0)
    args.quiet = getattr(args, "quiet", False)
    args.threads = getattr(args, "threads", None)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except SizeGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalOverflowError, NotConvergedError, DegenerateEquilibriumError,
            InfeasibleMatrixError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ValueError, KeyError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
