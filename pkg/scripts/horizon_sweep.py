"""Modification time for a fixed changed stage while the horizon grows.

Only stages 0..t_m are touched, so the time should not depend on N.

    python3 scripts/horizon_sweep.py --size 50 --tm 4
"""
import argparse
import statistics
import time

from riccmod import bench
from riccmod.asqp import make_delta, partition
from riccmod.lowrank import modify_factorization
from riccmod.uftoc import factorize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=50)
    ap.add_argument("--tm", type=int, default=4)
    ap.add_argument("--horizons", default="10,20,40,80,160")
    ap.add_argument("--samples", type=int, default=31)
    a = ap.parse_args()

    calls = {}
    for N in (int(v) for v in a.horizons.split(",")):
        p, old, new = bench.make_instance(0, N, a.size, a.tm)
        up, _ = partition(p, old)
        f = factorize(up)
        delta = make_delta(p, old, new)
        calls[N] = (lambda up=up, f=f, d=delta: modify_factorization(up, f, d))
    samples = {N: [] for N in calls}
    for _ in range(a.samples):  # round-robin so machine noise is shared
        for N, fn in calls.items():
            t0 = time.perf_counter_ns()
            fn()
            samples[N].append(time.perf_counter_ns() - t0)
    for N, ts in samples.items():
        print(f"N={N:4d} modify {statistics.median(ts) / 1e6:.3f} ms")


if __name__ == "__main__":
    main()
