"""Command-line entry point ``brw-lab``.

Exit codes: 0 when every gate passes, 2 when a statistical gate fails,
1 on any execution error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import brw_sim, spine_sim, walk
from .harness.config import EXPERIMENTS, load_config
from .harness.io import dumps_json, write_csv, write_json
from .harness.parallel import resolve_workers
from .harness.rng import RngStream
from .harness.runner import run_experiment
from .harness.stats import agree
from .models import STEP_LAWS, StepDistribution, make_spec, spine_step_law, validate_boundary

__all__ = ["main", "build_parser", "parse_grid", "EXIT_OK", "EXIT_GATE", "EXIT_ERROR"]

EXIT_OK, EXIT_ERROR, EXIT_GATE = 0, 1, 2


def parse_count(text: str) -> int:
    """Integers written as 1000, 1e6 or 1_000_000."""
    v = float(text.replace("_", ""))
    if not v.is_integer() or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return int(v)


def parse_grid(text: str) -> np.ndarray:
    """'a:b' (integers a..b inclusive), 'a:b:step', or a comma list."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1.0)
            lo, hi, step = parts
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return lo + step * np.arange(n)
        return np.array([float(p) for p in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use a:b, a:b:step or a comma list") from None


def _step_law(name: str, variance: float) -> StepDistribution:
    if name == "gaussian":
        return StepDistribution.gaussian(variance)
    if name == "spine":
        return spine_step_law(make_spec(p=1.0))
    return STEP_LAWS[name]()


def _emit(args, summary: dict, tables: dict[str, list] | None = None) -> int:
    """Print the summary, write it and the tables under --out, map the gate to an exit code."""
    sys.stdout.write(dumps_json(summary))
    if args.out:
        out = Path(args.out)
        write_json(out / f"{args.command}.json", summary)
        for name, rows in (tables or {}).items():
            if rows:
                write_csv(out / f"{name}.csv", rows)
    return EXIT_OK if summary.get("passed", True) else EXIT_GATE


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    spec = make_spec(p=args.p)
    barrier = brw_sim.BarrierPolicy.none() if args.slack is None else \
        brw_sim.BarrierPolicy.fixed(args.slack)
    rows = []
    for r in range(args.replicas):
        rng = RngStream(args.seed, r).generator()
        tree = brw_sim.simulate_tree(spec, args.horizon, barrier, rng)
        rows.append(brw_sim.replica_row(args.seed, r, tree, rng))
    w = np.array([row["W_n"] for row in rows])
    d = np.array([row["D_n"] for row in rows])
    se = lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.inf
    passed = True
    if barrier.kind == "none" and len(rows) > 1:
        passed = abs(w.mean() - 1.0) <= 3 * se(w) and abs(d.mean()) <= 3 * se(d)
    summary = {"p": spec.p, "horizon": args.horizon, "replicas": args.replicas, "seed": args.seed,
               "mean_W_n": float(w.mean()), "stderr_W_n": se(w), "mean_D_n": float(d.mean()),
               "stderr_D_n": se(d), "passed": bool(passed)}
    return _emit(args, summary, {"replicas": rows})


def cmd_spine(args) -> int:
    spec = make_spec(p=args.p)
    rng = RngStream(args.seed).generator()
    rows = []
    if args.check == "many-to-one":
        tab = spine_sim.many_to_one_table(spec, args.n_max, args.tags.split(","), args.samples, rng)
        for (tag, n), (lhs, rhs) in sorted(tab.items()):
            rows.append({"g": tag, "n": n, "tree": lhs.value, "tree_stderr": lhs.stderr, "walk": rhs.value,
                         "walk_stderr": rhs.stderr, "agree": agree(lhs, rhs)})
    else:
        for k in range(1, args.n_max + 1):
            fwd, rev = spine_sim.time_reversal_check(spec, k, args.functional, args.samples, rng)
            rows.append({"functional": args.functional, "k": k, "forward": fwd.value,
                         "forward_stderr": fwd.stderr, "reversed": rev.value, "reversed_stderr": rev.stderr,
                         "agree": agree(fwd, rev)})
    passed = all(r["agree"] for r in rows)
    summary = {"check": args.check, "p": spec.p, "samples": args.samples, "seed": args.seed,
               "passed": passed, "rows": rows}
    return _emit(args, summary, {args.check: rows})


def cmd_renewal(args) -> int:
    dist = _step_law(args.dist, args.variance)
    rng = RngStream(args.seed).generator() if args.method == "mc" else None
    tab = walk.renewal_table(dist, args.u, args.method, args.samples, rng)
    rows = list(tab.rows())
    if args.quantity != "both":
        key = "minus" if args.quantity == "rminus" else "plus"
        rows = [{"u": r["u"], f"r_{key}": r[f"r_{key}"], f"err_{key}": r[f"err_{key}"]} for r in rows]
    err = np.concatenate([tab.error_minus, tab.error_plus])
    passed = tab.is_monotone() and (args.method == "mc" or float(err.max()) <= args.tol)
    summary = {"dist": dist.name, "method": args.method, "quantity": args.quantity,
               "max_error": float(err.max()), "tol": args.tol, "monotone": tab.is_monotone(),
               "theta0": tab.theta0, "passed": bool(passed)}
    if args.out is None:
        summary["rows"] = rows
    return _emit(args, summary, {"renewal": rows})


def cmd_min_tail(args) -> int:
    spec = make_spec(p=args.p)
    est = spine_sim.estimate_min_tail(spec, args.x, args.kmax, args.samples, args.seed, J=args.J,
                                      slack=args.slack, workers=args.workers)
    exm = est.extra["exm_phat"]
    passed = 0.0 < exm <= 1.0 + 3.0 * est.stderr * math.exp(args.x)
    summary = {"x": args.x, "p_hat": est.value, "stderr": est.stderr, "exm_phat": exm,
               "truncation_bound": est.extra["truncation_bound"], "passed": bool(passed)}
    return _emit(args, summary, {"intervals": est.extra.get("intervals", [])})


def cmd_theorem(args) -> int:
    cfg = load_config(args.config)
    changes = {"experiment": args.which, "seed": args.seed}
    if args.p is not None:
        changes["model.p"] = args.p
    if args.samples is not None:
        changes["run.samples"] = args.samples
    cfg = cfg.replace(**changes)
    summary = run_experiment(cfg, args.out, args.workers)
    summary.pop("rows")
    sys.stdout.write(dumps_json({"experiment": summary["experiment"], "seed": summary["seed"],
                                 "passed": summary["passed"]}))
    return EXIT_OK if summary["passed"] else EXIT_GATE


def cmd_verify(args) -> int:
    rows = []
    if args.what == "lemma25":
        dist = _step_law(args.dist, args.variance)
        for x in args.x_grid.astype(int):
            for a in args.a_grid.astype(int):
                r = walk.check_renewal_identity(dist, int(x), int(a))
                rows.append({"x": r.x, "a": r.a, "lhs": r.lhs, "rhs": r.rhs, "residual": r.residual,
                             "bound": r.bound, "passed": r.passes and abs(r.residual) <= args.tol})
    elif args.what == "harmonicity":
        dist = _step_law(args.dist, args.variance)
        for u in args.u_grid:
            rng = RngStream(args.seed, int(u * 1000)).generator()
            r = walk.check_harmonicity(dist, float(u), args.mode, args.samples, rng)
            rows.append({"u": r.u, "residual": r.residual, "stderr": r.stderr, "passed": r.passes()})
    else:
        for p in args.p_grid:
            r = validate_boundary(make_spec(p=float(p)))
            rows.append({"p": float(p), "residual_mass": r.residual_mass, "residual_tilt": r.residual_tilt,
                         "sigma2_spine": r.sigma2_spine, "passed": r.ok()})
    passed = all(r["passed"] for r in rows)
    summary = {"check": args.what, "passed": passed,
               "max_abs_residual": max(abs(r.get("residual", r.get("residual_mass", 0.0))) for r in rows),
               "rows": rows}
    return _emit(args, summary, {args.what: rows})


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1: code 2 is reserved for failed statistical gates."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=parse_count, default=d(0), help="root seed (64-bit)")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("--workers", type=int, default=d(None),
                        help="worker processes (BRW_LAB_WORKERS overrides)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="brw-lab", description="Boundary-case branching random walk lab")
    _common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("simulate", cmd_simulate, "simulate trees and write per-replica functionals")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=8)
    p.add_argument("--replicas", type=parse_count, default=1000)
    p.add_argument("--slack", type=float, default=None, help="kill particles above this height")

    p = add("spine", cmd_spine, "many-to-one and time-reversal checks")
    p.add_argument("--check", choices=("many-to-one", "reversal"), default="many-to-one")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--tags", default="one,le0,sexp")
    p.add_argument("--functional", default="endpoint", choices=sorted(spine_sim.REVERSAL_FUNCTIONALS))
    p.add_argument("--samples", type=parse_count, default=100_000)

    p = add("renewal", cmd_renewal, "renewal function tables")
    p.add_argument("--dist", choices=(*STEP_LAWS, "gaussian", "spine"), default="srw")
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--quantity", choices=("rminus", "rplus", "both"), default="both")
    p.add_argument("--u", type=parse_grid, default=parse_grid("0:20"))
    p.add_argument("--method", choices=walk.renewal.METHODS, default="dp")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--samples", type=parse_count, default=100_000)

    p = add("min-tail", cmd_min_tail, "P(M <= -x) by the spine importance sampler")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--samples", type=parse_count, default=100_000)
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--J", type=int, default=8, help="number of unit intervals summed below -x")
    p.add_argument("--slack", type=float, default=spine_sim.DEFAULT_SLACK)

    p = add("theorem", cmd_theorem, "tail-constant experiments")
    p.add_argument("--which", choices=EXPERIMENTS, required=True)
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--samples", type=parse_count, default=None)

    p = add("verify", cmd_verify, "exact identities of the walk and the offspring law")
    p.add_argument("what", choices=("lemma25", "harmonicity", "boundary"))
    p.add_argument("--dist", choices=(*STEP_LAWS, "gaussian", "spine"), default="srw")
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--x-grid", type=parse_grid, default=parse_grid("1:10"))
    p.add_argument("--a-grid", type=parse_grid, default=parse_grid("1:5"))
    p.add_argument("--u-grid", type=parse_grid, default=parse_grid("0,1,5,20"))
    p.add_argument("--p-grid", type=parse_grid, default=parse_grid("0.6,0.8,1"))
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--samples", type=parse_count, default=100_000)
    p.add_argument("--tol", type=float, default=1e-5)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.workers = resolve_workers(args.workers)
        return args.func(args)
    except Exception as exc:  # any failure is an execution error, not a gate failure
        print(f"brw-lab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
