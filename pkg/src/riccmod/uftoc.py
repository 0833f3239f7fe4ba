"""Equality-constrained finite-horizon control problems and their Riccati solve.

The subproblem solved at each active-set iteration is

    min  sum_t 1/2 [x_t; w_t]^T [[Qx, Qxw], [Qxw^T, Qw]] [x_t; w_t]
                 + lx^T x_t + lw^T w_t + c_t
         + 1/2 x_N^T QxN x_N + lxN^T x_N + cN
    s.t. x_0 = x0,  x_{t+1} = A_t x_t + B_t w_t + a_t.

``factorize`` runs the Riccati factorization, ``backward`` and ``forward``
the two substitution sweeps. All per-stage lists of the factorization are
indexed by t, so ``G[t]`` is the matrix G_{t+1} that couples stage t to the
cost-to-go P_{t+1}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InfeasibleOrUnbounded
from .linalg import (
    DERIVED_PSD_TOL,
    RANK_RTOL,
    PsdFactorization,
    as_finite,
    factor_psd,
    is_psd,
    lowrank_root,
    pseudo_solve,
    sym,
)

#: range-membership tolerance for singular stages, relative to 1 + ||rhs||
RANGE_RTOL = 1e-8


@dataclass
class UftocProblem:
    A: list
    B: list
    a: list
    Qx: list
    Qxw: list
    Qw: list
    lx: list
    lw: list
    c: list
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

    def nw(self, t: int) -> int:
        return self.B[t].shape[1]

    def validate(self, check_psd: bool = True) -> "UftocProblem":
        nx = self.nx
        lists = (self.A, self.B, self.a, self.Qx, self.Qxw, self.Qw, self.lx, self.lw, self.c)
        if any(len(v) != self.N for v in lists):
            raise DimensionMismatch("per-stage lists have different lengths")
        for t in range(self.N):
            nw = self.nw(t)
            shapes = {
                "A": (self.A[t].shape, (nx, nx)),
                "B": (self.B[t].shape, (nx, nw)),
                "a": (self.a[t].shape, (nx,)),
                "Qx": (self.Qx[t].shape, (nx, nx)),
                "Qxw": (self.Qxw[t].shape, (nx, nw)),
                "Qw": (self.Qw[t].shape, (nw, nw)),
                "lx": (self.lx[t].shape, (nx,)),
                "lw": (self.lw[t].shape, (nw,)),
            }
            for name, (got, want) in shapes.items():
                if got != want:
                    raise DimensionMismatch(f"{name}[{t}] has shape {got}, expected {want}")
            for name in ("A", "B", "a", "Qx", "Qxw", "Qw", "lx", "lw"):
                as_finite(getattr(self, name)[t], f"{name}[{t}]")
            if check_psd and not is_psd(self.stage_cost(t)):
                raise ValueError(f"stage cost {t} is not PSD")
        if self.x0.shape != (nx,) or self.lxN.shape != (nx,) or self.QxN.shape != (nx, nx):
            raise DimensionMismatch("terminal data or initial state has wrong shape")
        if check_psd and not is_psd(self.QxN):
            raise ValueError("terminal cost is not PSD")
        return self

    def stage_cost(self, t: int) -> np.ndarray:
        return np.block([[self.Qx[t], self.Qxw[t]], [self.Qxw[t].T, self.Qw[t]]])


@dataclass
class RiccatiFactorization:
    P: list
    F: list
    G: list
    H: list
    K: list
    Gfac: list

    @property
    def N(self) -> int:
        return len(self.G)

    @property
    def singular_stages(self) -> list[int]:
        return [t for t, f in enumerate(self.Gfac) if f.singular]

    def copy(self) -> "RiccatiFactorization":
        """Shallow copy: new stage lists sharing the per-stage arrays."""
        return RiccatiFactorization(
            list(self.P), list(self.F), list(self.G), list(self.H), list(self.K), list(self.Gfac)
        )


@dataclass
class BackwardPass:
    Psi: list
    k: list
    cbar: list


@dataclass
class Trajectory:
    x: list
    w: list
    lam: list

    def copy(self) -> "Trajectory":
        return Trajectory([v.copy() for v in self.x], [v.copy() for v in self.w],
                          [v.copy() for v in self.lam])


@dataclass
class StageFactor:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    K: np.ndarray
    Gfac: PsdFactorization


def riccati_step(A, B, Qx, Qxw, Qw, P_next, rtol: float = RANK_RTOL,
                 psd_tol: float = DERIVED_PSD_TOL):
    """One step of the factorization; returns (StageFactor, P_t)."""
    AP = A.T @ P_next
    PB = P_next @ B
    F = sym(Qx + AP @ A)
    G = sym(Qw + B.T @ PB)
    H = Qxw + A.T @ PB
    Gfac = factor_psd(G, rtol=rtol, psd_tol=psd_tol)
    K = -pseudo_solve(Gfac, H.T)
    # F - W W^T with W W^T = H G^+ H^T: rounding stays at eps * ||F||, whereas
    # F + H K would amplify it by cond(G)
    W = lowrank_root(Gfac, H)
    P = sym(F - W @ W.T)
    return StageFactor(F, G, H, K, Gfac), P


def factorize(p: UftocProblem, rtol: float = RANK_RTOL) -> RiccatiFactorization:
    """Riccati factorization of the KKT matrix.

    At singular stages K_{t+1} is the minimum-norm solution of
    G_{t+1} K = -H_{t+1}^T; see ``RiccatiFactorization.singular_stages``.
    """
    N = p.N
    P = [None] * (N + 1)
    F, G, H, K, Gfac = ([None] * N for _ in range(5))
    P[N] = sym(np.asarray(p.QxN, dtype=float))
    for t in range(N - 1, -1, -1):
        s, P[t] = riccati_step(p.A[t], p.B[t], p.Qx[t], p.Qxw[t], p.Qw[t], P[t + 1], rtol)
        F[t], G[t], H[t], K[t], Gfac[t] = s.F, s.G, s.H, s.K, s.Gfac
    return RiccatiFactorization(P, F, G, H, K, Gfac)


def _solve_stage_rhs(t, G, Gfac, rhs, range_rtol):
    kk = pseudo_solve(Gfac, rhs)
    if Gfac.singular:
        r = rhs - G @ kk
        nr = float(np.linalg.norm(r))
        if nr > range_rtol * (1.0 + float(np.linalg.norm(rhs))):
            raise InfeasibleOrUnbounded(t, direction=r / nr)
    return kk


def backward(
    p: UftocProblem,
    f: RiccatiFactorization,
    upto: int | None = None,
    base: BackwardPass | None = None,
    range_rtol: float = RANGE_RTOL,
) -> BackwardPass:
    """Backward sweep computing Psi_t, k_{t+1} and cbar_t.

    With ``base`` and ``upto`` given, entries for t > upto are taken from
    ``base`` and only t = upto, ..., 0 are recomputed.
    """
    N = p.N
    if base is None or upto is None:
        Psi = [None] * (N + 1)
        k = [None] * N
        cbar = [0.0] * (N + 1)
        Psi[N] = -np.asarray(p.lxN, dtype=float)
        cbar[N] = float(p.cN)
        upto = N - 1
    else:
        Psi, k, cbar = list(base.Psi), list(base.k), list(base.cbar)
    for t in range(upto, -1, -1):
        A, B, a = p.A[t], p.B[t], p.a[t]
        Pa = f.P[t + 1] @ a
        rhs = B.T @ (Psi[t + 1] - Pa) - p.lw[t]
        k[t] = _solve_stage_rhs(t, f.G[t], f.Gfac[t], rhs, range_rtol)
        Psi[t] = A.T @ (Psi[t + 1] - Pa) - f.H[t] @ k[t] - p.lx[t]
        cbar[t] = (
            cbar[t + 1]
            + float(p.c[t])
            + 0.5 * float(a @ Pa)
            - float(Psi[t + 1] @ a)
            - 0.5 * float(k[t] @ f.G[t] @ k[t])
        )
    return BackwardPass(Psi, k, cbar)


def forward(p: UftocProblem, f: RiccatiFactorization, b: BackwardPass) -> Trajectory:
    N = p.N
    x = [None] * (N + 1)
    w = [None] * N
    lam = [None] * (N + 1)
    x[0] = np.asarray(p.x0, dtype=float).copy()
    for t in range(N):
        w[t] = b.k[t] + f.K[t] @ x[t]
        x[t + 1] = p.A[t] @ x[t] + p.B[t] @ w[t] + p.a[t]
        lam[t] = f.P[t] @ x[t] - b.Psi[t]
    lam[N] = f.P[N] @ x[N] - b.Psi[N]
    return Trajectory(x, w, lam)


def solve(p: UftocProblem, rtol: float = RANK_RTOL):
    """Factorize, then run both sweeps. Returns (factorization, backward, trajectory)."""
    f = factorize(p, rtol)
    b = backward(p, f)
    return f, b, forward(p, f, b)


def dual_forward(fixed, traj: Trajectory) -> list:
    """Multipliers of the fixed inputs.

    ``fixed`` provides per-stage lists ``B_v``, ``Q_xv``, ``Q_wv``, ``Q_v``,
    ``l_v`` and ``v``. The returned vectors are the Lagrangian gradients with
    respect to the fixed inputs; free inputs carry no multiplier.
    """
    mu = []
    for t in range(len(traj.w)):
        mu.append(
            fixed.l_v[t]
            + fixed.Q_xv[t].T @ traj.x[t]
            + fixed.Q_wv[t].T @ traj.w[t]
            + fixed.Q_v[t] @ fixed.v[t]
            + fixed.B_v[t].T @ traj.lam[t + 1]
        )
    return mu


def kkt_residual_blocks(p: UftocProblem, traj: Trajectory) -> list:
    """Stationarity and feasibility residual blocks of the KKT system.

    Assembled directly from the problem data with the Lagrangian
    J + lam_0^T (x0 - x_0) + sum lam_{t+1}^T (A x_t + B w_t + a - x_{t+1}).
    """
    N = p.N
    x, w, lam = traj.x, traj.w, traj.lam
    out = [x[0] - p.x0]
    for t in range(N):
        out.append(p.Qx[t] @ x[t] + p.Qxw[t] @ w[t] + p.lx[t] - lam[t] + p.A[t].T @ lam[t + 1])
        out.append(p.Qxw[t].T @ x[t] + p.Qw[t] @ w[t] + p.lw[t] + p.B[t].T @ lam[t + 1])
        out.append(p.A[t] @ x[t] + p.B[t] @ w[t] + p.a[t] - x[t + 1])
    out.append(p.QxN @ x[N] + p.lxN - lam[N])
    return out


def kkt_residual(p: UftocProblem, traj: Trajectory) -> float:
    return float(np.sqrt(sum(float(r @ r) for r in kkt_residual_blocks(p, traj))))


def objective(p: UftocProblem, x: list, w: list) -> float:
    J = 0.0
    for t in range(p.N):
        J += 0.5 * float(x[t] @ p.Qx[t] @ x[t]) + float(x[t] @ p.Qxw[t] @ w[t])
        J += 0.5 * float(w[t] @ p.Qw[t] @ w[t])
        J += float(p.lx[t] @ x[t]) + float(p.lw[t] @ w[t]) + float(p.c[t])
    xN = x[p.N]
    return J + 0.5 * float(xN @ p.QxN @ xN) + float(p.lxN @ xN) + float(p.cN)


def value_function(f: RiccatiFactorization, b: BackwardPass, x0) -> float:
    x0 = np.asarray(x0, dtype=float)
    return 0.5 * float(x0 @ f.P[0] @ x0) - float(b.Psi[0] @ x0) + float(b.cbar[0])
