"""Command line: ``solve``, ``verify`` and ``bounds``.

Exit codes: 0 on success, 1 when the solver or a check fails, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import InputError, MirrorProxError
from . import io
from .drivers import FAMILIES, SolveConfig, dump_instance, recompute_bounds, solve, verify_instance, write_solution

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(p):
    for f in fields(SolveConfig):
        flag = "--" + f.name.replace("_", "-")
        kw = {"dest": f.name, "default": None, "metavar": f.name.upper()}
        if f.name == "family":
            kw["choices"] = FAMILIES
        p.add_argument(flag, **kw)


def build_parser():
    parser = _Parser(prog="mirrorprox", description="Composite Mirror Prox solvers with accuracy certificates.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("solve", help="generate or load an instance and solve it")
    s.add_argument("--config", help="key = value file; flags override it")
    s.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    s.add_argument("--out", help="trace CSV path")
    s.add_argument("--solution-dir", help="write final solution blocks as CSV here")
    s.add_argument("--dump-instance", help="write the instance (CSV matrices, omega.csv, meta.txt) here")
    s.add_argument("--dump-protocol", help="write protocol aggregates (.npz) for the bounds command")
    s.add_argument("--image-out", help="write the low-rank, sparse and smooth parts as PGM files with this prefix")
    _add_config_flags(s)

    v = sub.add_parser("verify", help="re-check a dumped planted instance")
    v.add_argument("instance", help="instance directory written by solve --dump-instance")

    b = sub.add_parser("bounds", help="recompute certificate bounds from a dumped protocol")
    b.add_argument("protocol", help=".npz file written by solve --dump-protocol")
    b.add_argument("--instance", required=True, help="instance directory of the same run")
    return parser


def _config_from(args):
    values = io.read_config(args.config) if args.config else {}
    for f in fields(SolveConfig):
        val = getattr(args, f.name)
        if val is not None:
            values[f.name] = val
    return SolveConfig.from_mapping(values)


def _fmt(x):
    return f"{x:.10g}" if isinstance(x, float) else str(x)


def cmd_solve(args, out):
    cfg = _config_from(args)
    if args.dump_config:
        out.write(cfg.as_text())
        return EXIT_OK
    outcome = solve(cfg)
    if args.out:
        io.write_trace_csv(args.out, outcome.rows)
    if args.solution_dir:
        write_solution(args.solution_dir, outcome)
    if args.dump_instance:
        dump_instance(args.dump_instance, cfg, outcome.instance)
    if args.dump_protocol:
        if outcome.protocol is None:
            raise InputError("protocol dumps are available for matrix completion runs only")
        np.savez(args.dump_protocol, **outcome.protocol)
    if args.image_out and "low_rank" in outcome.solution:
        for name, M in outcome.solution.items():
            lo, hi = float(M.min()), float(M.max())
            io.write_pgm(f"{args.image_out}{name}.pgm", (M - lo) / (hi - lo) if hi > lo else M * 0)
    out.write(f"family      {outcome.family}\n")
    out.write(f"upper       {_fmt(outcome.upper)}\n")
    out.write(f"lower       {_fmt(outcome.lower)}\n")
    out.write(f"rel_gap     {_fmt(float(outcome.rel_gap))}\n")
    out.write(f"steps       {outcome.steps}\n")
    out.write(f"restarts    {outcome.restarts}\n")
    for k, v in outcome.summary.items():
        out.write(f"{k:<11} {_fmt(v)}\n")
    if outcome.family == "l1_planted" and not outcome.summary["reached"]:
        out.write("target accuracy not reached within the step budget\n")
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(args, out):
    out.write(verify_instance(args.instance) + "\n")
    return EXIT_OK


def cmd_bounds(args, out):
    res = recompute_bounds(args.protocol, args.instance)
    for k in ("upper", "lower", "gap", "radius"):
        out.write(f"{k:<7} {_fmt(float(res[k]))}\n")
    return EXIT_OK


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    threads = os.environ.get("COMP_PROX_THREADS", "1")
    try:
        limit = int(threads)
    except ValueError:
        sys.stderr.write(f"COMP_PROX_THREADS must be an integer, got {threads!r}\n")
        return EXIT_USAGE
    handler = {"solve": cmd_solve, "verify": cmd_verify, "bounds": cmd_bounds}[args.command]
    try:
        with threadpool_limits(limits=limit):
            return handler(args, out)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (MirrorProxError, FileNotFoundError, KeyError) as exc:
        sys.stderr.write(f"failure: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
