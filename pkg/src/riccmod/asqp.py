"""Primal active-set solver for input-constrained finite-horizon control QPs.

Each iteration partitions the inputs into free (w_t) and fixed (v_t, held at
a bound) parts, solves the resulting equality-constrained subproblem with
the Riccati recursion and either steps to its solution, adds a blocking bound
or releases the bound with the most negative multiplier. From the second
iteration on the factorization is modified rather than recomputed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    InfeasibleOrUnbounded,
    IterationLimit,
    UnboundedDirection,
)
from .linalg import is_psd
from .lowrank import ADD, REMOVE, AppendedColumns, WorkingSetDelta, modify_factorization
from .uftoc import UftocProblem, backward, dual_forward, factorize, forward

LOWER = "lower"
UPPER = "upper"
#: relative size (w.r.t. the largest component) below which a step
#: component is ignored by the ratio test
STEP_RTOL = 1e-10


@dataclass
class CftocProblem:
    """min sum_t 1/2 [x;u]^T [[Qx, Qxu], [Qxu^T, Qu]] [x;u] + lx^T x + lu^T u + c
    + terminal cost, s.t. x_{t+1} = A x + B u + a, umin <= u <= umax."""

    A: list
    B: list
    a: list
    Qx: list
    Qxu: list
    Qu: list
    lx: list
    lu: list
    c: list
    umin: list
    umax: list
    QxN: np.ndarray
    lxN: np.ndarray
    cN: float
    x0: np.ndarray

    @property
    def N(self) -> int:
        return len(self.A)

    @property
    def nx(self) -> int:
        return self.QxN.shape[0]

    def nu(self, t: int) -> int:
        return self.B[t].shape[1]

    def stage_cost(self, t: int) -> np.ndarray:
        return np.block([[self.Qx[t], self.Qxu[t]], [self.Qxu[t].T, self.Qu[t]]])

    def validate(self) -> "CftocProblem":
        nx = self.nx
        for t in range(self.N):
            nu = self.nu(t)
            if self.A[t].shape != (nx, nx) or self.B[t].shape[0] != nx:
                raise DimensionMismatch(f"dynamics of stage {t} have wrong shape")
            if self.Qxu[t].shape != (nx, nu) or self.Qu[t].shape != (nu, nu):
                raise DimensionMismatch(f"cost of stage {t} has wrong shape")
            if self.umin[t].shape != (nu,) or self.umax[t].shape != (nu,):
                raise DimensionMismatch(f"bounds of stage {t} have wrong shape")
            if np.any(self.umin[t] > self.umax[t]):
                raise ValueError(f"umin > umax at stage {t}")
            if not is_psd(self.stage_cost(t)):
                raise ValueError(f"stage cost {t} is not PSD")
        if not is_psd(self.QxN):
            raise ValueError("terminal cost is not PSD")
        return self

    def simulate(self, u: list) -> list:
        x = [np.asarray(self.x0, dtype=float)]
        for t in range(self.N):
            x.append(self.A[t] @ x[t] + self.B[t] @ u[t] + self.a[t])
        return x

    def objective(self, x: list, u: list) -> float:
        J = 0.0
        for t in range(self.N):
            J += 0.5 * float(x[t] @ self.Qx[t] @ x[t]) + float(x[t] @ self.Qxu[t] @ u[t])
            J += 0.5 * float(u[t] @ self.Qu[t] @ u[t])
            J += float(self.lx[t] @ x[t]) + float(self.lu[t] @ u[t]) + float(self.c[t])
        xN = x[self.N]
        return J + 0.5 * float(xN @ self.QxN @ xN) + float(self.lxN @ xN) + float(self.cN)


@dataclass
class WorkingSet:
    """Per-stage ordered free indices and fixed indices with their bound side.

    The order of ``free[t]`` is the order of w_t; fixed inputs enter v_t in
    increasing index order.
    """

    free: list
    fixed: list

    @classmethod
    def all_free(cls, p: CftocProblem) -> "WorkingSet":
        return cls([list(range(p.nu(t))) for t in range(p.N)], [{} for _ in range(p.N)])

    @classmethod
    def from_fixed(cls, p: CftocProblem, fixed: list) -> "WorkingSet":
        fixed = [dict(f) for f in fixed]
        free = [[i for i in range(p.nu(t)) if i not in fixed[t]] for t in range(p.N)]
        return cls(free, fixed)

    def copy(self) -> "WorkingSet":
        return WorkingSet([list(f) for f in self.free], [dict(f) for f in self.fixed])

    def fixed_order(self, t: int) -> list:
        return sorted(self.fixed[t])

    def key(self) -> tuple:
        return tuple(tuple(sorted(f.items())) for f in self.fixed)

    def size(self) -> int:
        return sum(len(f) for f in self.fixed)

    def validate(self, p: CftocProblem) -> "WorkingSet":
        for t in range(p.N):
            if sorted(self.free[t] + list(self.fixed[t])) != list(range(p.nu(t))):
                raise ValueError(f"working set does not partition the inputs of stage {t}")
            for i, side in self.fixed[t].items():
                if side not in (LOWER, UPPER):
                    raise ValueError(f"bad bound side {side!r}")
                bound = p.umin[t][i] if side == LOWER else p.umax[t][i]
                if not np.isfinite(bound):
                    raise ValueError(f"input ({t}, {i}) fixed at an infinite bound")
        return self

    def release(self, changes) -> "WorkingSet":
        """Free the (t, i) pairs; they are appended to the end of w_t."""
        ws = self.copy()
        for t, i in changes:
            del ws.fixed[t][i]
            ws.free[t].append(i)
        return ws

    def fix(self, changes) -> "WorkingSet":
        """Fix the (t, i, side) triples at the given bound."""
        ws = self.copy()
        for t, i, side in changes:
            ws.free[t].remove(i)
            ws.fixed[t][i] = side
        return ws


@dataclass
class PartitionedData:
    """Fixed-input blocks per stage, as needed for the multipliers."""

    free: list
    fixed: list
    B_v: list
    Q_xv: list
    Q_wv: list
    Q_v: list
    l_v: list
    v: list


def bound_values(p: CftocProblem, ws: WorkingSet, t: int) -> np.ndarray:
    idx = ws.fixed_order(t)
    return np.array(
        [p.umin[t][i] if ws.fixed[t][i] == LOWER else p.umax[t][i] for i in idx], dtype=float
    )


def partition(p: CftocProblem, ws: WorkingSet):
    """Split the inputs by ``ws``; returns (UftocProblem, PartitionedData)."""
    B, Qxw, Qw, lx, lw, c, a = [], [], [], [], [], [], []
    pd = PartitionedData([], [], [], [], [], [], [], [])
    for t in range(p.N):
        fr = list(ws.free[t])
        fx = ws.fixed_order(t)
        v = bound_values(p, ws, t)
        Bv = p.B[t][:, fx]
        Qxv = p.Qxu[t][:, fx]
        Qwv = p.Qu[t][np.ix_(fr, fx)]
        Qv = p.Qu[t][np.ix_(fx, fx)]
        lv = p.lu[t][fx]
        B.append(p.B[t][:, fr])
        Qxw.append(p.Qxu[t][:, fr])
        Qw.append(p.Qu[t][np.ix_(fr, fr)])
        lx.append(p.lx[t] + Qxv @ v)
        lw.append(p.lu[t][fr] + Qwv @ v)
        c.append(float(p.c[t]) + float(lv @ v) + 0.5 * float(v @ Qv @ v))
        a.append(p.a[t] + Bv @ v)
        for name, val in (("free", fr), ("fixed", fx), ("B_v", Bv), ("Q_xv", Qxv),
                          ("Q_wv", Qwv), ("Q_v", Qv), ("l_v", lv), ("v", v)):
            getattr(pd, name).append(val)
    up = UftocProblem(p.A, B, a, p.Qx, Qxw, Qw, lx, lw, c, p.QxN, p.lxN, p.cN, p.x0)
    return up, pd


def assemble_inputs(pd: PartitionedData, w: list) -> list:
    u = []
    for t in range(len(w)):
        ut = np.empty(len(pd.free[t]) + len(pd.fixed[t]))
        ut[pd.free[t]] = w[t]
        ut[pd.fixed[t]] = pd.v[t]
        u.append(ut)
    return u


def make_delta(p: CftocProblem, old: WorkingSet, new: WorkingSet) -> WorkingSetDelta | None:
    """Translate a working-set change into a factorization delta.

    Returns None when nothing changed. Raises ValueError for mixed changes or
    when ``new`` does not order w_t the way the modification assumes.
    """
    freed, fixed = {}, {}
    for t in range(p.N):
        f_ = [i for i in new.free[t] if i in old.fixed[t]]
        x_ = [i for i in old.free[t] if i in new.fixed[t]]
        if f_:
            freed[t] = f_
        if x_:
            fixed[t] = x_
    if freed and fixed:
        raise ValueError("mixed add/remove change; apply it as two deltas")
    if freed:
        changes = {}
        for t, idx in freed.items():
            if new.free[t] != old.free[t] + idx:
                raise ValueError(f"freed inputs must be appended to w_{t}")
            fr = old.free[t]
            changes[t] = AppendedColumns(
                b=p.B[t][:, idx],
                q_xw=p.Qxu[t][:, idx],
                q_w=p.Qu[t][np.ix_(fr, idx)],
                q_w0=p.Qu[t][np.ix_(idx, idx)],
            )
        return WorkingSetDelta(REMOVE, changes)
    if fixed:
        changes = {}
        for t, idx in fixed.items():
            pos = [old.free[t].index(i) for i in idx]
            if new.free[t] != [i for i in old.free[t] if i not in idx]:
                raise ValueError(f"remaining free inputs of stage {t} must keep their order")
            changes[t] = pos
        return WorkingSetDelta(ADD, changes)
    return None


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int | None = None
    modify: bool = True
    batch: bool = False
    rho: float | None = 0.5
    max_degenerate: int = 200
    check_factorization: bool = False


@dataclass
class CheckResult:
    kind: str  # "optimal" | "remove" | "block"
    changes: list = field(default_factory=list)
    alpha: float = 1.0


@dataclass
class IterationReport:
    iteration: int
    action: str
    changes: list
    alpha: float
    objective: float
    modified: bool
    rank: int = 0
    fallback: bool = False


@dataclass
class AsSolution:
    u: list
    x: list
    lam: list
    mu: list
    working_set: WorkingSet
    iterations: int
    reports: list
    objective: float

    @property
    def working_set_sequence(self) -> list:
        return [(r.action, tuple(r.changes)) for r in self.reports]


def signed_multipliers(p: CftocProblem, ws: WorkingSet, pd: PartitionedData, mu_raw: list) -> list:
    """Bound multipliers (>= 0 at a KKT point) embedded in full input vectors."""
    out = []
    for t in range(p.N):
        m = np.zeros(p.nu(t))
        for j, i in enumerate(pd.fixed[t]):
            m[i] = mu_raw[t][j] if ws.fixed[t][i] == LOWER else -mu_raw[t][j]
        out.append(m)
    return out


def _step_tol(d: list) -> float:
    # direction components below this are rounding noise; the clip to the
    # bounds after each step absorbs the motion they would cause
    return STEP_RTOL * max((float(np.abs(v).max()) for v in d if v.size), default=0.0)


def _ratio_test(p: CftocProblem, ws: WorkingSet, u: list, d: list, step_tol: float):
    """Largest step in [0, inf) keeping free inputs within bounds, with all
    blocking (t, i, side) triples at that step (lexicographic order)."""
    best = np.inf
    cands = []
    for t in range(p.N):
        for i in sorted(ws.free[t]):
            di = d[t][i]
            if di > step_tol and np.isfinite(p.umax[t][i]):
                r, side = (p.umax[t][i] - u[t][i]) / di, UPPER
            elif di < -step_tol and np.isfinite(p.umin[t][i]):
                r, side = (p.umin[t][i] - u[t][i]) / di, LOWER
            else:
                continue
            r = max(r, 0.0)
            cands.append((r, t, i, side))
            best = min(best, r)
    if not cands:
        return np.inf, []
    tie = 1e-13 * max(1.0, best)
    return best, [(t, i, s) for r, t, i, s in cands if r <= best + tie]


def optimality_check(p: CftocProblem, ws: WorkingSet, u: list, u_target: list, mu: list,
                     tol: float = 1e-8, batch: bool = False) -> CheckResult:
    """Decide the next active-set move.

    ``mu`` are signed multipliers (see ``signed_multipliers``) evaluated at
    ``u_target``. Blocking takes precedence; ties go to the lowest (t, i).
    """
    d = [ut - uc for ut, uc in zip(u_target, u)]
    alpha, blocking = _ratio_test(p, ws, u, d, _step_tol(d))
    if alpha < 1.0:
        return CheckResult("block", blocking if batch else blocking[:1], alpha)
    worst, pick, negatives = -tol, None, []
    for t in range(p.N):
        for i in sorted(ws.fixed[t]):
            if mu[t][i] < -tol:
                negatives.append((t, i))
            if mu[t][i] < worst:
                worst, pick = mu[t][i], (t, i)
    if pick is None:
        return CheckResult("optimal", [], 1.0)
    return CheckResult("remove", negatives if batch else [pick], 1.0)


def _ray(p: CftocProblem, up: UftocProblem, pd: PartitionedData, f, err: InfeasibleOrUnbounded):
    """Zero-curvature input direction from a singular stage (w in null(G))."""
    ts = err.stage
    dw = [np.zeros(up.nw(t)) for t in range(p.N)]
    dw[ts] = err.direction.copy()
    dx = up.B[ts] @ dw[ts]
    for t in range(ts + 1, p.N):
        dw[t] = f.K[t] @ dx
        dx = up.A[t] @ dx + up.B[t] @ dw[t]
    d = []
    for t in range(p.N):
        dt = np.zeros(p.nu(t))
        dt[pd.free[t]] = dw[t]
        d.append(dt)
    return d


def initial_point(p: CftocProblem, ws: WorkingSet, u0: list | None = None) -> list:
    u = []
    for t in range(p.N):
        ut = np.zeros(p.nu(t)) if u0 is None else np.array(u0[t], dtype=float)
        ut = np.clip(ut, p.umin[t], p.umax[t])
        for i, side in ws.fixed[t].items():
            ut[i] = p.umin[t][i] if side == LOWER else p.umax[t][i]
        u.append(ut)
    return u


def solve(p: CftocProblem, init_ws: WorkingSet | None = None, opts: SolverOptions | None = None,
          u0: list | None = None, callback=None) -> AsSolution:
    """Solve the box-constrained problem from a primal feasible start.

    The start point takes ``u0`` (default zero), clipped to the bounds, with
    the inputs fixed by ``init_ws`` moved onto their bound. ``callback(u, ws)``
    sees every iterate, including the start point and the optimum.
    """
    opts = opts or SolverOptions()
    ws = (init_ws or WorkingSet.all_free(p)).copy().validate(p)
    max_iter = opts.max_iter or 50 * max(1, sum(p.nu(t) for t in range(p.N)))
    u = initial_point(p, ws, u0)
    x = p.simulate(u)
    J = p.objective(x, u)
    if callback:
        callback(u, ws)

    reports = []
    f = b = delta = prev_up = None
    seen = {ws.key()}
    stall = 0
    for it in range(max_iter):
        up, pd = partition(p, ws)
        modified, rank, fallback = False, 0, False
        if f is None or delta is None or not opts.modify:
            f = factorize(up)
            b = None
        else:
            f, rep = modify_factorization(prev_up, f, delta, rho=opts.rho)
            modified, fallback = True, rep.fallback
            rank = max(rep.ranks.values(), default=0)
        if opts.check_factorization:
            _check_against_fresh(up, f)
        try:
            if b is None or not modified:
                b = backward(up, f)
            else:
                b = backward(up, f, upto=delta.t_m, base=b)
            traj = forward(up, f, b)
            u_target = assemble_inputs(pd, traj.w)
            ray = None
        except InfeasibleOrUnbounded as err:
            b = None
            ray = _ray(p, up, pd, f, err)

        if ray is None:
            mu = signed_multipliers(p, ws, pd, dual_forward(pd, traj))
            chk = optimality_check(p, ws, u, u_target, mu, opts.tol, opts.batch)
        else:
            xr = p.simulate([ut + dt for ut, dt in zip(u, ray)])
            if p.objective(xr, [ut + dt for ut, dt in zip(u, ray)]) > J:
                ray = [-dt for dt in ray]
            alpha, blocking = _ratio_test(p, ws, u, ray, _step_tol(ray))
            if not blocking:
                raise UnboundedDirection(f"zero-curvature descent ray with no blocking bound (iteration {it})")
            chk = CheckResult("block", blocking if opts.batch else blocking[:1], alpha)

        if chk.kind == "optimal":
            u = u_target
            x, lam = traj.x, traj.lam
            J = p.objective(x, u)
            if callback:
                callback(u, ws)
            reports.append(IterationReport(it, "optimal", [], 1.0, J, modified, rank, fallback))
            return AsSolution(u, x, lam, mu, ws, it + 1, reports, J)

        step_dir = ray if ray is not None else [ut - uc for ut, uc in zip(u_target, u)]
        if chk.kind == "block":
            u = [uc + chk.alpha * dc for uc, dc in zip(u, step_dir)]
            for t, i, side in chk.changes:
                u[t][i] = p.umin[t][i] if side == LOWER else p.umax[t][i]
            new_ws = ws.fix(chk.changes)
        else:
            u = u_target
            new_ws = ws.release(chk.changes)
        u = [np.clip(ut, lo, hi) for ut, lo, hi in zip(u, p.umin, p.umax)]
        x = p.simulate(u)
        J_new = p.objective(x, u)
        reports.append(IterationReport(it, "add" if chk.kind == "block" else "remove",
                                       list(chk.changes), chk.alpha, J_new, modified, rank, fallback))
        if J_new < J - 1e-12 * (1.0 + abs(J)):
            seen = set()
            stall = 0
        else:
            stall += 1
            if new_ws.key() in seen or stall > opts.max_degenerate:
                raise CycleDetected(f"working set repeated without progress at iteration {it}")
        seen.add(new_ws.key())
        J = J_new
        if callback:
            callback(u, new_ws)
        delta = make_delta(p, ws, new_ws)
        prev_up = up
        ws = new_ws
    raise IterationLimit(f"no optimum after {max_iter} iterations")


def _check_against_fresh(up: UftocProblem, f, tol: float = 1e-8) -> None:
    ref = factorize(up)
    for t in range(up.N + 1):
        scale = 1.0 + np.abs(ref.P[t]).max()
        if np.abs(f.P[t] - ref.P[t]).max() > tol * scale:
            raise AssertionError(f"modified P_{t} deviates from a fresh factorization")


def kkt_residual(p: CftocProblem, sol: AsSolution) -> float:
    """Norm of stationarity, dynamics and complementarity residuals plus bound
    violations and negative multipliers."""
    x, u, lam, mu = sol.x, sol.u, sol.lam, sol.mu
    r = [x[0] - p.x0]
    for t in range(p.N):
        sides = np.array([0.0] * p.nu(t))
        for i, side in sol.working_set.fixed[t].items():
            sides[i] = -1.0 if side == LOWER else 1.0
        r.append(p.Qx[t] @ x[t] + p.Qxu[t] @ u[t] + p.lx[t] - lam[t] + p.A[t].T @ lam[t + 1])
        r.append(p.Qxu[t].T @ x[t] + p.Qu[t] @ u[t] + p.lu[t] + p.B[t].T @ lam[t + 1] + sides * mu[t])
        r.append(p.A[t] @ x[t] + p.B[t] @ u[t] + p.a[t] - x[t + 1])
        r.append(np.maximum(u[t] - p.umax[t], 0.0) + np.maximum(p.umin[t] - u[t], 0.0))
        r.append(np.minimum(mu[t], 0.0))
    r.append(p.QxN @ x[p.N] + p.lxN - lam[p.N])
    return float(np.sqrt(sum(float(v @ v) for v in r)))
