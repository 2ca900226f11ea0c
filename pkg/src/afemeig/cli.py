"""Command-line interface.

Subcommands: run (adaptive loop), uniform (mark-everything baseline),
verify-lower-bound (lower-bound/oscillation diagnostics), mesh-info.
Exit codes: 0 clean stop, 1 configuration error, 2 eigensolver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import driver, eigsolve, marking
from . import mesh as _mesh
from .problem import ProblemDef, ProblemError, builtin, load_problem

BUILTINS = ("square", "lshape", "interface")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}")


def _add_common(sub):
    sub.add_argument("--problem", required=True,
                     help="builtin name (square, lshape, interface) or "
                          "problem file path")
    sub.add_argument("--degree", type=int, default=None,
                     help="polynomial degree 1, 2 or 3")
    sub.add_argument("--eig-index", type=int, default=None,
                     help="1-based eigenvalue index to track")
    sub.add_argument("--mark", default=None,
                     choices=list(marking.STRATEGIES), help="marking strategy")
    sub.add_argument("--theta", type=float, default=None,
                     help="marking parameter in (0, 1]")
    sub.add_argument("--max-dofs", type=int, default=50_000)
    sub.add_argument("--max-iters", type=int, default=100)
    sub.add_argument("--tol", type=float, default=0.0,
                     help="stop when the global estimator falls below this")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--timing", action="store_true",
                     help="record wall-clock times in log.csv (makes the "
                          "log non-reproducible)")


def _load(args) -> ProblemDef:
    if args.problem in BUILTINS:
        return builtin(args.problem,
                       degree=args.degree or 1,
                       eig_index=args.eig_index or 1)
    if not os.path.exists(args.problem):
        raise ProblemError(f"no such problem file or builtin: "
                           f"{args.problem!r}")
    p = load_problem(args.problem)
    overrides = {}
    if args.degree is not None:
        overrides["degree"] = args.degree
    if args.eig_index is not None:
        overrides["eig_index"] = args.eig_index
    if overrides:
        from dataclasses import replace
        p = replace(p, **overrides)  # re-runs validation
    return p


def _config(args) -> driver.AdaptConfig:
    p = _load(args)
    strategy = args.mark or p.mark_strategy or "doerfler"
    theta = args.theta if args.theta is not None else (p.mark_theta or 0.5)
    return driver.AdaptConfig(
        problem=p, mark=marking.MarkConfig(strategy, theta),
        max_iterations=args.max_iters, max_dofs=args.max_dofs,
        eta_tol=args.tol, seed=args.seed, record_walltime=args.timing)


def _write_outputs(log: driver.RunLog, out_dir):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    log.save_csv(os.path.join(out_dir, "log.csv"))
    _mesh.write_mesh(log.final_tri, os.path.join(out_dir, "final_mesh.txt"),
                     eta=log.final_field.eta)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(log.summary())


def main(argv=None) -> int:
    parser = _Parser(prog="afemeig",
                     description="Adaptive finite elements for elliptic "
                                 "eigenvalue problems")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "uniform"):
        _add_common(subs.add_parser(name))
    vlb = subs.add_parser("verify-lower-bound")
    _add_common(vlb)
    vlb.add_argument("--levels", type=int, default=4)
    vlb.add_argument("--top", type=int, default=10)
    info = subs.add_parser("mesh-info")
    info.add_argument("--problem", required=True)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if not exc.code else 1

    try:
        if args.command == "mesh-info":
            return _mesh_info(args)
        cfg = _config(args)
        if args.command == "run":
            log = driver.adapt_loop(cfg)
        elif args.command == "uniform":
            log = driver.uniform_baseline(cfg)
        else:
            report = driver.verify_lower_bound(cfg, levels=args.levels,
                                               top=args.top)
            print(report.summary(), end="")
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                with open(os.path.join(args.out, "lower_bound.txt"), "w") as fh:
                    fh.write(report.summary())
            return 0
    except (ProblemError, driver.ConfigError, marking.MarkingError,
            _mesh.MeshError) as exc:
        print(f"afemeig: {exc}", file=sys.stderr)
        return 1
    except eigsolve.EigenSolveError as exc:
        it = getattr(exc, "iteration", None)
        where = f" at iteration {it}" if it is not None else ""
        print(f"afemeig: eigensolver failed{where}: {exc}", file=sys.stderr)
        partial = getattr(exc, "partial_records", None)
        if partial and args.out:
            os.makedirs(args.out, exist_ok=True)
            rows = [driver.CSV_HEADER] + [r.to_csv_row() for r in partial]
            with open(os.path.join(args.out, "log.csv"), "w") as fh:
                fh.write("\n".join(rows) + "\n")
        return 2

    _write_outputs(log, args.out)
    print(log.summary(), end="")
    return 0


def _mesh_info(args) -> int:
    if args.problem in BUILTINS:
        tri = builtin(args.problem).tri
    elif os.path.exists(args.problem):
        try:
            tri = load_problem(args.problem).tri
        except ProblemError:
            tri, _ = _mesh.read_mesh(args.problem)
    else:
        raise ProblemError(f"no such file or builtin: {args.problem!r}")
    tri.audit()
    interior = int((~tri.boundary_sides).sum())
    print(f"vertices: {tri.num_vertices}")
    print(f"elements: {tri.num_elements}")
    print(f"sides: {tri.num_sides} ({interior} interior)")
    print(f"area: {float(tri.areas().sum())!r}")
    print(f"h_max: {_mesh.meshsize_max(tri)!r}")
    print(f"regularity: {_mesh.regularity(tri)!r}")
    print("conformity audit: passed")
    return 0
