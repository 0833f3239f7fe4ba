"""Modify vs recompute time over problem size, change at the first and last stage.

    python3 scripts/best_worst_case.py --problems 20 --out results/best_worst.csv

Writes one row per (size, t_m policy) with times averaged over the problems.
"""
import argparse
import csv
import statistics
from pathlib import Path

from riccmod import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=10)
    ap.add_argument("--sizes", default="log:10:200:8")
    ap.add_argument("--problems", type=int, default=20)
    ap.add_argument("--inner", type=int, default=3)
    ap.add_argument("--out", default="results/best_worst.csv")
    a = ap.parse_args()
    lo, hi, num = (int(v) for v in a.sizes[4:].split(":"))
    sizes = bench.logspaced_sizes(lo, hi, num)

    rows = []
    for policy in ("first", "last"):
        s = bench.BenchScenario(N=a.horizon, sizes=sizes, tm=policy, reps=a.problems,
                                inner=a.inner)
        recs = bench.run_benchmark(s)
        bench.verify_residuals(recs)
        for n in sizes:
            sel = [r for r in recs if r.size == n]
            t_mod = statistics.mean(r.t_modify_ns for r in sel)
            t_re = statistics.mean(r.t_recompute_ns for r in sel)
            rows.append([n, policy, t_mod, t_re, t_mod / t_re,
                         max(max(r.resid_modify, r.resid_recompute) for r in sel)])
            print(f"n={n:4d} t_m={policy:5s} modify {t_mod / 1e6:8.3f} ms  "
                  f"recompute {t_re / 1e6:8.3f} ms  ratio {t_mod / t_re:.3f}")

    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "tm", "t_modify_ns", "t_recompute_ns", "ratio", "max_residual"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
