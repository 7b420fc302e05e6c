"""Command-line entry points: solve, sweep-k, converge-h, verify, demo, bench."""

import argparse
import json
import sys

import numpy as np

from .harness import (load_config, run_benchmark, run_demo,
                      run_h_refinement, run_k_sweep)
from .lattice import build_discrete_domain, export_csv
from .operators import make_cutoff_operator
from .solver import BarrierError, build_psi0, residual_field, solve
from .estimates import build_power_barrier, estimate_report


def _add_common(p):
    p.add_argument("--config", required=True, help="study TOML file")
    p.add_argument("--out", default=None, help="results CSV path")
    p.add_argument("--report", default=None, help="report JSON path")


def build_parser():
    ap = argparse.ArgumentParser(prog="cutfd",
                                 description="monotone finite-difference "
                                             "solver for cut-off fully "
                                             "nonlinear elliptic equations")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one (h, K) instance")
    _add_common(p)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--K", type=float, default=None,
                   help="cut-off level; omit for the raw operator")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=1_000_000)

    p = sub.add_parser("sweep-k", help="solve across the K schedule")
    _add_common(p)

    p = sub.add_parser("converge-h", help="solve across the h schedule")
    _add_common(p)

    p = sub.add_parser("verify", help="estimate report for a solved instance")
    _add_common(p)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--K", type=float, default=None)
    p.add_argument("--barrier-only", action="store_true",
                   help="only run the two barrier sampling suites")

    p = sub.add_parser("demo", help="run a canned study")
    p.add_argument("name", choices=["poisson", "eq12", "bellman",
                                    "nonuniqueness"])
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("bench", help="compare the jit and numpy backends")
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--kind", default="eq12", choices=["eq12", "poisson"])
    return ap


def _dump_report(payload, path):
    if path:
        with open(path, "w") as fh:
            fh.write(payload if isinstance(payload, str)
                     else json.dumps(payload, indent=2))
    else:
        sys.stdout.write(payload if isinstance(payload, str)
                         else json.dumps(payload, indent=2))
        sys.stdout.write("\n")


def cmd_solve(args):
    cfg = load_config(args.config)
    cfg.tol = args.tol
    cfg.max_iters = args.max_iters
    h = args.h or cfg.h_schedule[0]
    op = cfg.operator if args.K is None \
        else make_cutoff_operator(cfg.operator, args.K)
    dd = build_discrete_domain(cfg.domain, h, cfg.operator.dirs)
    rep = solve(op, dd, cfg.g, tol=cfg.tol, max_iters=cfg.max_iters)
    if args.out:
        gf = rep.solution
        export_csv(gf, args.out)
    summary = rep.summary()
    res = residual_field(cfg.operator, dd, rep.solution.values)
    summary["base_residual_sup"] = float(np.max(np.abs(res)))
    _dump_report(summary, args.report)
    return 0


def cmd_sweep_k(args):
    cfg = load_config(args.config)
    result = run_k_sweep(cfg)
    if args.out:
        result.to_csv(args.out)
    from .harness import _jsonable
    _dump_report({"name": result.name, "rows": result.rows,
                  "extra": _jsonable(result.extra)}, args.report)
    return 0


def cmd_converge_h(args):
    cfg = load_config(args.config)
    result = run_h_refinement(cfg)
    if args.out:
        result.to_csv(args.out)
    from .harness import _jsonable
    _dump_report({"name": result.name, "rows": result.rows,
                  "extra": _jsonable(result.extra)}, args.report)
    return 0


def cmd_verify(args):
    cfg = load_config(args.config)
    out = {}
    if args.barrier_only:
        h = args.h or cfg.h_schedule[0]
        dd = build_discrete_domain(cfg.domain, h, cfg.operator.dirs)
        psi = build_psi0(dd, cfg.operator)
        out["cosh_barrier"] = {"mu": psi.mu, "margin": psi.margin,
                               "nodes_checked": int(dd.n_interior),
                               "holds": psi.margin <= -1.0}
        try:
            pb = build_power_barrier(cfg.operator.dirs, cfg.operator.delta,
                                     max(cfg.operator.K0, 1.0),
                                     cfg.domain.exterior_ball_radius)
            out["power_barrier"] = {"alpha": pb.alpha,
                                    "worst_value": pb.worst_value,
                                    "holds": True}
        except BarrierError as err:
            out["power_barrier"] = {"holds": False, "reason": str(err)}
        _dump_report(out, args.report)
        return 0
    h = args.h or cfg.h_schedule[0]
    K = args.K if args.K is not None else cfg.k_schedule[0]
    op = make_cutoff_operator(cfg.operator, K)
    dd = build_discrete_domain(cfg.domain, h, cfg.operator.dirs)
    rep = solve(op, dd, cfg.g, tol=cfg.tol, max_iters=cfg.max_iters)
    est = estimate_report(rep.solution.values, op, dd, cfg.g, cfg.tol)
    _dump_report(est.to_json(), args.report)
    return 0


def cmd_demo(args):
    run_demo(args.name, out_dir=args.out_dir)
    return 0


def cmd_bench(args):
    run_benchmark(h=args.h, sweeps=args.sweeps, kind=args.kind)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"solve": cmd_solve, "sweep-k": cmd_sweep_k,
                "converge-h": cmd_converge_h, "verify": cmd_verify,
                "demo": cmd_demo, "bench": cmd_bench}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
