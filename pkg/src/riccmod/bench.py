"""Modify-versus-recompute timing experiments.

Each measurement takes a factorized problem, changes the working set at one
stage t_m, and times (a) the low-rank modification of the existing
factorization and (b) a fresh factorization of the changed problem. Only the
factorization step is timed; both solutions are then completed with the
substitution sweeps and their KKT residuals recorded.
"""
from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .asqp import LOWER, WorkingSet, make_delta, partition
from .errors import ThresholdExceeded
from .generate import STRICT, gen_cftoc
from .lowrank import modify_factorization, refresh_solution
from .uftoc import backward, factorize, forward, kkt_residual

HEADER = ["size", "N", "tm", "rep", "t_recompute_ns", "t_modify_ns",
          "resid_recompute", "resid_modify", "rank", "fallback"]


@dataclass
class BenchScenario:
    seed: int = 0
    N: int = 10
    sizes: list = field(default_factory=lambda: [10, 20, 50, 100, 200])
    tm: str = "first"  # first | last | frac:<f>
    reps: int = 3
    kind: str = "remove"  # remove | add
    k: int = 1
    modify: bool = True
    rho: float | None = 0.5
    inner: int = 3

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        self.sizes = sorted(int(s) for s in self.sizes)
        if self.kind not in ("remove", "add"):
            raise ValueError(f"unknown delta kind {self.kind!r}")
        self.stage()  # validates the policy

    def stage(self) -> int:
        if self.tm == "first":
            return 0
        if self.tm == "last":
            return self.N - 1
        if self.tm.startswith("frac:"):
            f = float(self.tm[5:])
            if not 0.0 <= f <= 1.0:
                raise ValueError("t_m fraction must lie in [0, 1]")
            return min(self.N - 1, int(round(f * (self.N - 1))))
        raise ValueError(f"unknown t_m policy {self.tm!r}")


@dataclass
class BenchRecord:
    size: int
    N: int
    tm: int
    rep: int
    t_recompute_ns: int
    t_modify_ns: int | None
    resid_recompute: float
    resid_modify: float | None
    rank: int
    fallback: bool
    pk_diff: float | None = None

    def row(self) -> list:
        return [self.size, self.N, self.tm, self.rep, self.t_recompute_ns,
                "" if self.t_modify_ns is None else self.t_modify_ns,
                f"{self.resid_recompute:.6e}",
                "" if self.resid_modify is None else f"{self.resid_modify:.6e}",
                self.rank, int(self.fallback)]


def logspaced_sizes(lo: int, hi: int, num: int) -> list:
    return sorted(set(int(round(v)) for v in np.geomspace(lo, hi, num)))


def _median_ns(fn, inner: int) -> int:
    fn()  # warm-up
    times = []
    for _ in range(inner):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(statistics.median(times))


def make_instance(seed: int, N: int, n: int, tm: int, kind: str = "remove", k: int = 1):
    """Problem with n_x = n_u = n and a one-stage working-set change at ``tm``.

    ``remove`` frees ``k`` inputs that start out fixed at ``tm``; ``add``
    fixes ``k`` free inputs there. Returns (cftoc, old ws, new ws).
    """
    p = gen_cftoc(seed, N, n, n, STRICT)
    k = min(k, n)
    idx = list(range(k))
    if kind == "remove":
        old = WorkingSet.from_fixed(p, [{i: LOWER for i in idx} if t == tm else {}
                                        for t in range(N)])
        new = old.release([(tm, i) for i in idx])
    else:
        old = WorkingSet.all_free(p)
        new = old.fix([(tm, i, LOWER) for i in idx])
    return p, old, new


def measure(p, old, new, rep: int, inner: int = 3, modify: bool = True,
            rho: float | None = 0.5) -> BenchRecord:
    up_old, _ = partition(p, old)
    up_new, _ = partition(p, new)
    delta = make_delta(p, old, new)
    f_old = factorize(up_old)
    b_old = backward(up_old, f_old)

    t_re = _median_ns(lambda: factorize(up_new), inner)
    f_re = factorize(up_new)
    b_re = backward(up_new, f_re)
    resid_re = kkt_residual(up_new, forward(up_new, f_re, b_re))

    t_mod = resid_mod = diff = None
    rank, fallback = 0, False
    if modify:
        t_mod = _median_ns(lambda: modify_factorization(up_old, f_old, delta, rho=rho), inner)
        f_mod, rep_ = modify_factorization(up_old, f_old, delta, rho=rho)
        _, traj, _ = refresh_solution(up_new, f_mod, b_old, delta.t_m)
        resid_mod = kkt_residual(up_new, traj)
        rank = max(rep_.ranks.values(), default=0)
        fallback = rep_.fallback
        diff = max(
            max(float(np.abs(a - b).max()) for a, b in zip(f_mod.P, f_re.P)),
            max((float(np.abs(a - b).max()) for a, b in zip(f_mod.K, f_re.K) if a.size),
                default=0.0),
        )
    return BenchRecord(up_new.nx, p.N, delta.t_m, rep, t_re, t_mod, resid_re, resid_mod,
                       rank, fallback, diff)


def run_benchmark(s: BenchScenario, progress=None) -> list:
    """All (size, repetition) measurements of a scenario, one instance each."""
    tm = s.stage()
    out = []
    for size in s.sizes:
        for rep in range(s.reps):
            p, old, new = make_instance(s.seed * 100003 + size * 101 + rep, s.N, size, tm,
                                        s.kind, s.k)
            rec = measure(p, old, new, rep, s.inner, s.modify, s.rho)
            out.append(rec)
            if progress:
                progress(rec)
    return out


def write_csv(records: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in records:
            w.writerow(r.row())


def write_sidecar(s: BenchScenario, records: list, path) -> None:
    with open(path, "w") as fh:
        json.dump({"scenario": asdict(s),
                   "pk_diff": [r.pk_diff for r in records]}, fh, indent=2)


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class VerifyReport:
    rows: int
    max_residual: float
    worst_row: int | None
    passed: bool
    warning: str | None = None


def _row_residuals(row) -> list:
    if isinstance(row, BenchRecord):
        vals = [row.resid_recompute, row.resid_modify]
    else:
        vals = [row.get("resid_recompute"), row.get("resid_modify")]
    return [float(v) for v in vals if v not in (None, "")]


def verify_residuals(rows: list, tol: float = 1e-8) -> VerifyReport:
    """Largest KKT residual over all rows; raises ThresholdExceeded above ``tol``."""
    if not rows:
        return VerifyReport(0, 0.0, None, True, "no rows to verify")
    worst, value = None, 0.0
    for i, row in enumerate(rows):
        for v in _row_residuals(row):
            if worst is None or not np.isfinite(v) or v > value:
                worst, value = i, v
        if not np.isfinite(value):
            break
    if not np.isfinite(value) or value > tol:
        raise ThresholdExceeded(worst, value, tol)
    return VerifyReport(len(rows), value, worst, True)
