"""Command-line entry point: ``python -m riccmod {gen,solve,bench,verify}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import asqp, bench, serialize, uftoc
from .errors import RiccmodError, ThresholdExceeded
from .generate import SEMIDEFINITE, STRICT, gen_cftoc, gen_problem

EXIT_OK = 0
EXIT_RESIDUAL = 2
EXIT_SOLVER = 3


def _sizes(text: str) -> list:
    if text.startswith("log:"):
        lo, hi, num = (int(v) for v in text[4:].split(":"))
        return bench.logspaced_sizes(lo, hi, num)
    return [int(v) for v in text.split(",") if v]


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text)
    else:
        print(text)


def cmd_gen(a) -> int:
    if a.kind == "uftoc":
        p = gen_problem(a.seed, a.horizon, a.nx, a.nu, a.convexity)
    else:
        p = gen_cftoc(a.seed, a.horizon, a.nx, a.nu, a.convexity, active_frac=a.active)
    _emit(serialize.to_dict(p), a.out)
    return EXIT_OK


def _vec(v) -> list:
    return [float(x) for x in np.ravel(v)]


def cmd_solve(a) -> int:
    p = serialize.load(a.problem)
    try:
        if isinstance(p, uftoc.UftocProblem):
            _, _, traj = uftoc.solve(p)
            resid = uftoc.kkt_residual(p, traj)
            out = {"x": [_vec(v) for v in traj.x], "u": [_vec(v) for v in traj.w],
                   "lam": [_vec(v) for v in traj.lam],
                   "objective": uftoc.objective(p, traj.x, traj.w)}
        else:
            opts = asqp.SolverOptions(tol=a.tol, modify=not a.no_modify)
            sol = asqp.solve(p, opts=opts)
            resid = asqp.kkt_residual(p, sol)
            out = {"x": [_vec(v) for v in sol.x], "u": [_vec(v) for v in sol.u],
                   "lam": [_vec(v) for v in sol.lam], "mu": [_vec(v) for v in sol.mu],
                   "objective": sol.objective, "iterations": sol.iterations,
                   "active": [[t, i, side] for t, fx in enumerate(sol.working_set.fixed)
                              for i, side in sorted(fx.items())]}
    except RiccmodError as e:
        print(f"solver error: {e!r}", file=sys.stderr)
        return EXIT_SOLVER
    out["residual"] = resid
    _emit(out, a.out)
    if resid > a.tol:
        print(f"residual {resid:.3e} exceeds {a.tol:.1e}", file=sys.stderr)
        return EXIT_RESIDUAL
    return EXIT_OK


def _scenario(a) -> bench.BenchScenario:
    kw = {}
    if a.config:
        kw.update(json.loads(Path(a.config).read_text()))
    names = {f.name for f in fields(bench.BenchScenario)}
    flags = {"seed": a.seed, "N": a.horizon, "sizes": a.sizes and _sizes(a.sizes),
             "tm": a.tm, "reps": a.reps, "kind": a.delta, "k": a.k}
    kw.update({k: v for k, v in flags.items() if v is not None})
    if a.no_modify:
        kw["modify"] = False
    unknown = set(kw) - names
    if unknown:
        raise ValueError(f"unknown scenario fields {sorted(unknown)}")
    return bench.BenchScenario(**kw)


def cmd_bench(a) -> int:
    s = _scenario(a)
    out = Path(a.out or "bench.csv")
    try:
        records = bench.run_benchmark(
            s, progress=None if a.quiet else lambda r: print(" ".join(map(str, r.row())),
                                                            file=sys.stderr))
    except RiccmodError as e:
        with open(out, "w") as fh:
            fh.write(",".join(bench.HEADER) + "\n")
            fh.write(f"# error: {e!r}\n")
        print(f"solver error: {e!r}", file=sys.stderr)
        return EXIT_SOLVER
    bench.write_csv(records, out)
    bench.write_sidecar(s, records, out.with_suffix(".json"))
    try:
        rep = bench.verify_residuals(records, a.tol)
    except ThresholdExceeded as e:
        print(str(e), file=sys.stderr)
        return EXIT_RESIDUAL
    print(f"{rep.rows} rows written to {out}; max residual {rep.max_residual:.3e}")
    return EXIT_OK


def cmd_verify(a) -> int:
    rows = bench.read_csv(a.results)
    try:
        rep = bench.verify_residuals(rows, a.tol)
    except ThresholdExceeded as e:
        print(f"FAIL: {e}")
        return EXIT_RESIDUAL
    if rep.warning:
        print(f"warning: {rep.warning}")
    print(f"PASS: {rep.rows} rows, max residual {rep.max_residual:.3e} (row {rep.worst_row})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riccmod", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="emit a random problem as JSON")
    g.add_argument("--kind", choices=["uftoc", "cftoc"], default="cftoc")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--horizon", type=int, default=10)
    g.add_argument("--nx", type=int, default=4)
    g.add_argument("--nu", type=int, default=2)
    g.add_argument("--convexity", choices=[STRICT, SEMIDEFINITE], default=STRICT)
    g.add_argument("--active", type=float, default=0.3, help="target fraction of active bounds")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen)

    s = sub.add_parser("solve", help="solve a problem JSON file")
    s.add_argument("problem")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--no-modify", action="store_true", help="re-factorize every iteration")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_solve)

    b = sub.add_parser("bench", help="time modification against re-factorization")
    b.add_argument("--config", help="JSON file with BenchScenario fields")
    b.add_argument("--seed", type=int)
    b.add_argument("--horizon", type=int)
    b.add_argument("--sizes", help="comma list or log:<lo>:<hi>:<num>")
    b.add_argument("--tm", help="first | last | frac:<f>")
    b.add_argument("--reps", type=int)
    b.add_argument("--delta", choices=["remove", "add"])
    b.add_argument("--k", type=int, help="inputs changed at t_m")
    b.add_argument("--tol", type=float, default=1e-8)
    b.add_argument("--no-modify", action="store_true")
    b.add_argument("--quiet", action="store_true")
    b.add_argument("--out", help="CSV path (a .json sidecar is written next to it)")
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("verify", help="check the residual columns of a bench CSV")
    v.add_argument("results")
    v.add_argument("--tol", type=float, default=1e-8)
    v.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.fn(a)
