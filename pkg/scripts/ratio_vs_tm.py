"""Ratio of modification to re-factorization time as the changed stage moves
towards the end of the horizon.

    python3 scripts/ratio_vs_tm.py --size 100 --horizon 10
"""
import argparse
import csv
import statistics
from pathlib import Path

from riccmod import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=100)
    ap.add_argument("--horizon", type=int, default=10)
    ap.add_argument("--problems", type=int, default=10)
    ap.add_argument("--k", type=int, default=1, help="inputs freed at t_m")
    ap.add_argument("--out", default="results/ratio_vs_tm.csv")
    a = ap.parse_args()

    rows = []
    for tm in range(a.horizon):
        ratios = []
        for rep in range(a.problems):
            p, old, new = bench.make_instance(1000 * rep + tm, a.horizon, a.size, tm,
                                              "remove", a.k)
            r = bench.measure(p, old, new, rep)
            ratios.append(r.t_modify_ns / r.t_recompute_ns)
        rows.append([tm, statistics.mean(ratios), min(ratios), max(ratios)])
        print(f"t_m={tm:3d} ratio {rows[-1][1]:.3f} (min {rows[-1][2]:.3f}, max {rows[-1][3]:.3f})")

    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tm", "mean_ratio", "min_ratio", "max_ratio"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
