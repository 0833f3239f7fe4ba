"""Dual of the state-constrained control problem, itself a control problem.

The primal problem is

    min  sum_{t<N} 1/2 [z;u]^T Q_t [z;u] + l_z^T z + l_u^T u + c_t
         + 1/2 z_N^T Q_zN z_N + l_zN^T z_N + c_N
    s.t. x_0 = x0,  x_{t+1} = A x + B u + a,  z_t = M_t x_t,
         Hx_t x_t + Hu_t u_t + h_t <= 0,  Hx_N x_N + h_N <= 0

with every Q_t positive definite. With multipliers alpha_t (dynamics,
alpha_0 for the initial state), beta_t (outputs) and gamma_t >= 0
(inequalities), stationarity in x_t reads

    alpha_t = A_t^T alpha_{t+1} + M_t^T beta_t + Hx_t^T gamma_t,

a linear recursion running backwards in time. Reversing time with
tau = N - t, the state alpha_{t+1} and the input (beta_t, gamma_t) give a
control problem over N + 1 stages that starts at zero, whose stage cost is
the conjugate 1/2 r^T Qbar r of the primal stage cost evaluated at

    r_t = [l_z - beta_t;  l_u + B^T alpha_{t+1} + Hu^T gamma_t],

and whose only inequality constraints are gamma >= 0. Its optimal value is
the negated primal optimum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asqp import LOWER, UPPER, CftocProblem, SolverOptions, WorkingSet, make_delta, partition, solve
from .errors import DimensionMismatch, NotPd
from .linalg import sym
from .lowrank import modify_factorization
from .uftoc import backward, dual_forward, factorize, forward


@dataclass
class GeneralCftoc:
    A: list
    B: list
    a: list
    M: list
    Q: list  # (n_z + n_u) x (n_z + n_u), positive definite
    lz: list
    lu: list
    c: list
    Hx: list
    Hu: list
    h: list
    QzN: np.ndarray
    lzN: np.ndarray
    cN: float
    MN: np.ndarray
    HxN: np.ndarray
    hN: np.ndarray
    x0: np.ndarray

    @property
    def N(self) -> int:
        return len(self.A)

    @property
    def nx(self) -> int:
        return self.x0.shape[0]

    @property
    def nz(self) -> int:
        return self.QzN.shape[0]

    def nu(self, t: int) -> int:
        return self.B[t].shape[1]

    def nc(self, t: int) -> int:
        return self.HxN.shape[0] if t == self.N else self.Hx[t].shape[0]

    def validate(self) -> "GeneralCftoc":
        nx, nz = self.nx, self.nz
        for t in range(self.N):
            nu, nc = self.nu(t), self.nc(t)
            checks = [
                (self.A[t].shape, (nx, nx)), (self.B[t].shape, (nx, nu)),
                (self.M[t].shape, (nz, nx)), (self.Q[t].shape, (nz + nu, nz + nu)),
                (self.Hx[t].shape, (nc, nx)), (self.Hu[t].shape, (nc, nu)),
                (self.h[t].shape, (nc,)),
            ]
            for got, want in checks:
                if got != want:
                    raise DimensionMismatch(f"stage {t}: shape {got}, expected {want}")
        if self.MN.shape != (nz, nx) or self.HxN.shape[1:] != (nx,):
            raise DimensionMismatch("terminal data has wrong shape")
        for t, Q in enumerate(list(self.Q) + [self.QzN]):
            try:
                L = np.linalg.cholesky(sym(Q))
            except np.linalg.LinAlgError:
                raise NotPd(f"cost of stage {t} is not positive definite") from None
            if np.min(np.diag(L)) ** 2 <= 1e-13 * max(float(np.trace(Q)), 1e-300):
                raise NotPd(f"cost of stage {t} is numerically singular")
        return self

    def objective(self, x: list, u: list) -> float:
        J = 0.0
        for t in range(self.N):
            zu = np.concatenate([self.M[t] @ x[t], u[t]])
            J += 0.5 * float(zu @ self.Q[t] @ zu) + float(self.lz[t] @ zu[: self.nz])
            J += float(self.lu[t] @ u[t]) + float(self.c[t])
        zN = self.MN @ x[self.N]
        return J + 0.5 * float(zN @ self.QzN @ zN) + float(self.lzN @ zN) + float(self.cN)

    def simulate(self, u: list) -> list:
        x = [np.asarray(self.x0, dtype=float)]
        for t in range(self.N):
            x.append(self.A[t] @ x[t] + self.B[t] @ u[t] + self.a[t])
        return x

    def constraint_values(self, x: list, u: list) -> list:
        vals = [self.Hx[t] @ x[t] + self.Hu[t] @ u[t] + self.h[t] for t in range(self.N)]
        return vals + [self.HxN @ x[self.N] + self.hN]


@dataclass
class DualMap:
    """Inverse cost blocks per primal stage and the constraint index tables.

    ``Qbar[t]`` is the inverse of the primal stage cost (``Qbar[N]`` the
    inverse of the terminal output cost). Constraint (i, t) of the primal is
    the dual input ``n_z + i`` at dual stage ``N - t``.
    """

    N: int
    nz: int
    Qbar: list
    nc: list

    def Qbar_blocks(self, t: int):
        Qb, nz = self.Qbar[t], self.nz
        return Qb[:nz, :nz], Qb[:nz, nz:], Qb[nz:, nz:]

    def dual_index(self, i: int, t: int) -> tuple[int, int]:
        return self.N - t, self.nz + i

    def primal_index(self, tau: int, j: int) -> tuple[int, int]:
        if j < self.nz:
            raise ValueError("output multipliers have no primal constraint")
        return j - self.nz, self.N - tau

    def pairs(self):
        return [(i, t) for t in range(self.N + 1) for i in range(self.nc[t])]


def _inverse_pd(Q) -> np.ndarray:
    L = np.linalg.cholesky(sym(Q))
    Li = np.linalg.solve(L, np.eye(L.shape[0]))
    return sym(Li.T @ Li)


def build_dual(p: GeneralCftoc) -> tuple[CftocProblem, DualMap]:
    """Dual problem over N + 1 stages with reversed time and zero initial state."""
    p.validate()
    N, nx, nz = p.N, p.nx, p.nz
    Qbar = [_inverse_pd(Q) for Q in p.Q] + [_inverse_pd(p.QzN)]
    dm = DualMap(N, nz, Qbar, [p.nc(t) for t in range(N + 1)])
    A, B, a, Qx, Qxu, Qu, lx, lu, c, umin, umax = ([] for _ in range(11))
    for tau in range(N + 1):
        t = N - tau
        nc = p.nc(t)
        if t == N:
            Ad = np.zeros((nx, nx))
            Bd = np.hstack([p.MN.T, p.HxN.T])
            # r = l_zN - beta
            R = np.hstack([np.zeros((nz, nx)), -np.eye(nz), np.zeros((nz, nc))])
            r0 = np.asarray(p.lzN, dtype=float)
            lin = np.concatenate([np.zeros(nx + nz), -p.hN])
            const = -float(p.cN)
        else:
            nu = p.nu(t)
            Ad = p.A[t].T.copy()
            Bd = np.hstack([p.M[t].T, p.Hx[t].T])
            R = np.block([
                [np.zeros((nz, nx)), -np.eye(nz), np.zeros((nz, nc))],
                [p.B[t].T, np.zeros((nu, nz)), p.Hu[t].T],
            ])
            r0 = np.concatenate([p.lz[t], p.lu[t]])
            lin = np.concatenate([-p.a[t], np.zeros(nz), -p.h[t]])
            const = -float(p.c[t])
        Qb = Qbar[t]
        Qd = sym(R.T @ Qb @ R)
        ld = R.T @ Qb @ r0 + lin
        A.append(Ad)
        B.append(Bd)
        a.append(np.zeros(nx))
        Qx.append(Qd[:nx, :nx].copy())
        Qxu.append(Qd[:nx, nx:].copy())
        Qu.append(Qd[nx:, nx:].copy())
        lx.append(ld[:nx].copy())
        lu.append(ld[nx:].copy())
        c.append(0.5 * float(r0 @ Qb @ r0) + const)
        umin.append(np.concatenate([np.full(nz, -np.inf), np.zeros(nc)]))
        umax.append(np.full(nz + nc, np.inf))
    dual = CftocProblem(A, B, a, Qx, Qxu, Qu, lx, lu, c, umin, umax,
                        np.zeros((nx, nx)), -np.asarray(p.x0, dtype=float), 0.0, np.zeros(nx))
    return dual, dm


def recover_primal(p: GeneralCftoc, dm: DualMap, xd: list, ud: list, lam_d: list):
    """Primal states and inputs from a dual solution (x^d, u^d, lambda^d).

    ``xd`` has N + 2 dual states, ``ud`` N + 1 dual inputs and ``lam_d`` the
    N + 2 multipliers of the dual dynamics. Returns (x_0..x_N, u_0..u_{N-1}).
    """
    N, nz = p.N, p.nz
    if len(xd) != N + 2 or len(ud) != N + 1 or len(lam_d) != N + 2:
        raise DimensionMismatch("dual solution does not match the horizon")
    x = [-np.asarray(lam_d[N + 1 - t], dtype=float) for t in range(N + 1)]
    u = []
    for t in range(N):
        tau = N - t
        beta, gamma = ud[tau][:nz], ud[tau][nz:]
        _, Qzu, Qu = dm.Qbar_blocks(t)
        ru = p.lu[t] + p.B[t].T @ xd[tau] + p.Hu[t].T @ gamma
        u.append(-(Qzu.T @ (p.lz[t] - beta) + Qu @ ru))
    return x, u


def map_working_set(dual: CftocProblem, dm: DualMap, active) -> WorkingSet:
    """Dual working set for a primal working set given as (i, t) pairs.

    Multipliers of constraints outside the primal working set are fixed at
    zero; the rest (and every output multiplier) are free.
    """
    active = set(active)
    fixed = [dict() for _ in range(dm.N + 1)]
    for i, t in dm.pairs():
        if (i, t) not in active:
            tau, j = dm.dual_index(i, t)
            fixed[tau][j] = LOWER
    return WorkingSet.from_fixed(dual, fixed)


def primal_working_set(dm: DualMap, ws: WorkingSet) -> set:
    """Inverse of ``map_working_set``."""
    out = set()
    for tau in range(dm.N + 1):
        for j in ws.free[tau]:
            if j >= dm.nz:
                out.add(dm.primal_index(tau, j))
    for tau, fx in enumerate(ws.fixed):
        for j, side in fx.items():
            if j < dm.nz or side == UPPER:
                raise ValueError(f"dual input {j} at stage {tau} cannot be fixed")
    return out


def solve_dual(p: GeneralCftoc, opts: SolverOptions | None = None):
    """Solve ``p`` through its dual; returns (x, u, dual AsSolution).

    The dual active-set run starts with every inequality multiplier fixed at
    zero, i.e. from the primal problem without active constraints. Starting
    with all multipliers free would pose every constraint as an equality,
    which is typically infeasible and leaves the first dual subproblem
    unbounded.
    """
    dual, dm = build_dual(p)
    sol = solve(dual, init_ws=map_working_set(dual, dm, ()), opts=opts)
    x, u = recover_primal(p, dm, sol.x, sol.u, sol.lam)
    return x, u, sol


@dataclass
class DualDirection:
    """Solution of the dual equality-constrained subproblem for one working set."""

    ws: WorkingSet
    factorization: object
    backward: object
    x: list
    u: list
    lam: list
    mu: list
    modified: bool


def _transition(old: WorkingSet, new: WorkingSet):
    """Split old -> new into a fix step and a release step (either may be empty)."""
    fix, rel = [], []
    for t in range(len(old.free)):
        for i in old.free[t]:
            if i in new.fixed[t]:
                fix.append((t, i, new.fixed[t][i]))
        for i in sorted(old.fixed[t]):
            if i in new.free[t]:
                rel.append((t, i))
    return fix, rel


def dual_search_direction(dual: CftocProblem, ws: WorkingSet,
                          prev: DualDirection | None = None, modify: bool = True,
                          rho: float | None = 0.5) -> DualDirection:
    """Solve the dual subproblem with the inputs fixed by ``ws`` held at zero.

    With ``prev`` (the result for an earlier working set) and ``modify`` set,
    its factorization is modified instead of recomputed; a working-set change
    with both fixings and releases is applied as two one-kind modifications.
    """
    modified = False
    if prev is not None and modify:
        f, cur = prev.factorization, prev.ws
        fix, rel = _transition(cur, ws)
        b = prev.backward
        for step in (fix, rel):
            if not step:
                continue
            nxt = cur.fix(step) if step is fix else cur.release(step)
            delta = make_delta(dual, cur, nxt)
            up_cur, _ = partition(dual, cur)
            f, _ = modify_factorization(up_cur, f, delta, rho=rho)
            cur = nxt
            modified = True
        ws = cur
        up, pd = partition(dual, ws)
        b = backward(up, f)
    else:
        ws = ws.copy()
        up, pd = partition(dual, ws)
        f = factorize(up)
        b = backward(up, f)
    traj = forward(up, f, b)
    u = []
    for t in range(dual.N):
        ut = np.zeros(dual.nu(t))
        ut[pd.free[t]] = traj.w[t]
        ut[pd.fixed[t]] = pd.v[t]
        u.append(ut)
    return DualDirection(ws, f, b, traj.x, u, traj.lam, dual_forward(pd, traj), modified)
