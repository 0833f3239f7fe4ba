"""Random problem instances for tests, experiments and the CLI.

Dynamics entries are standard normal scaled by 1/sqrt(n_x). Stage costs are
R^T R / m (+ mu I when strictly convex). The semidefinite variant drops
the mu shift and zeroes the cost of one input per stage, so every Q_w is
singular; at about half of the stages that input also gets a zero column in
B, which makes the stage's G exactly singular (its linear cost is zeroed too,
so the instance stays bounded). Box bounds of the constrained variant are placed around the
unconstrained optimum so that about ``active_frac`` of the inputs end up on a
bound.
"""
from __future__ import annotations

import numpy as np

from .asqp import CftocProblem
from .uftoc import UftocProblem, solve

STRICT = "strict"
SEMIDEFINITE = "semidefinite"


def _psd(rng, n, convexity, mu, zero=None):
    if n == 0:
        return np.zeros((0, 0))
    R = rng.standard_normal((n, n))
    if zero is not None:
        R[:, zero] = 0.0
    Q = R.T @ R / n
    if convexity == STRICT:
        Q += mu * np.eye(n)
    return 0.5 * (Q + Q.T)


def gen_problem(seed: int, N: int, nx: int, nw: int, convexity: str = STRICT,
                mu: float = 1e-3) -> UftocProblem:
    """Random UFTOC instance, deterministic in ``seed``."""
    if convexity not in (STRICT, SEMIDEFINITE):
        raise ValueError(f"unknown convexity {convexity!r}")
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(nx)
    A, B, a, Qx, Qxw, Qw, lx, lw, c = ([] for _ in range(9))
    for _ in range(N):
        A.append(rng.standard_normal((nx, nx)) * s)
        Bt = rng.standard_normal((nx, nw)) * s
        a.append(rng.standard_normal(nx))
        zero = None
        inert = None
        if convexity == SEMIDEFINITE and nw:
            zero = int(rng.integers(nw))
            if rng.random() < 0.5:
                Bt[:, zero] = 0.0
                inert = zero
            zero += nx
        B.append(Bt)
        Q = _psd(rng, nx + nw, convexity, mu, zero)
        Qx.append(Q[:nx, :nx].copy())
        Qxw.append(Q[:nx, nx:].copy())
        Qw.append(Q[nx:, nx:].copy())
        lx.append(rng.standard_normal(nx))
        lw.append(rng.standard_normal(nw))
        if inert is not None:
            lw[-1][inert] = 0.0  # keeps the instance bounded
        c.append(0.0)
    QxN = _psd(rng, nx, convexity, mu)
    return UftocProblem(A, B, a, Qx, Qxw, Qw, lx, lw, c, QxN, rng.standard_normal(nx), 0.0,
                        rng.standard_normal(nx))


def gen_cftoc(seed: int, N: int, nx: int, nu: int, convexity: str = STRICT,
              mu: float = 1e-3, active_frac: float = 0.3) -> CftocProblem:
    """Random box-constrained instance built on ``gen_problem``."""
    p = gen_problem(seed, N, nx, nu, convexity, mu)
    rng = np.random.default_rng([seed, 1])
    if convexity == STRICT:
        _, _, traj = solve(p)
        u_free = traj.w
    else:
        u_free = [rng.standard_normal(nu) for _ in range(N)]
    umin, umax = [], []
    for t in range(N):
        lo = u_free[t] - 0.5 - rng.random(nu)
        hi = u_free[t] + 0.5 + rng.random(nu)
        cut = rng.random(nu) < active_frac
        up = rng.random(nu) < 0.5
        depth = 0.1 + 0.5 * rng.random(nu)
        hi = np.where(cut & up, u_free[t] - depth, hi)
        lo = np.where(cut & ~up, u_free[t] + depth, lo)
        lo = np.where(cut & up, hi - 1.0 - rng.random(nu), lo)
        hi = np.where(cut & ~up, lo + 1.0 + rng.random(nu), hi)
        umin.append(lo)
        umax.append(hi)
    return CftocProblem(p.A, p.B, p.a, p.Qx, p.Qxw, p.Qw, p.lx, p.lw, p.c, umin, umax,
                        p.QxN, p.lxN, p.cN, p.x0)


def gen_general(seed: int, N: int, nx: int, nu: int, nz: int, nc: int,
                slack: float = 0.3):
    """Random state- and input-constrained instance with positive definite costs.

    Constraint offsets are chosen so that a random input sequence is strictly
    feasible, which guarantees feasibility; ``slack`` sets the margin.
    """
    from .dualize import GeneralCftoc

    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(nx)
    A = [rng.standard_normal((nx, nx)) * s for _ in range(N)]
    B = [rng.standard_normal((nx, nu)) * s for _ in range(N)]
    a = [0.3 * rng.standard_normal(nx) for _ in range(N)]
    x0 = rng.standard_normal(nx)
    u_ref = [0.3 * rng.standard_normal(nu) for _ in range(N)]
    x = [x0]
    for t in range(N):
        x.append(A[t] @ x[t] + B[t] @ u_ref[t] + a[t])
    M, Q, lz, lu, c, Hx, Hu, h = ([] for _ in range(8))
    for t in range(N):
        M.append(rng.standard_normal((nz, nx)))
        Q.append(_psd(rng, nz + nu, STRICT, 0.1))
        lz.append(rng.standard_normal(nz))
        lu.append(rng.standard_normal(nu))
        c.append(float(rng.standard_normal()))
        Hx.append(rng.standard_normal((nc, nx)))
        Hu.append(rng.standard_normal((nc, nu)))
        h.append(-(Hx[t] @ x[t] + Hu[t] @ u_ref[t]) - slack * rng.random(nc))
    HxN = rng.standard_normal((nc, nx))
    hN = -(HxN @ x[N]) - slack * rng.random(nc)
    return GeneralCftoc(A, B, a, M, Q, lz, lu, c, Hx, Hu, h, _psd(rng, nz, STRICT, 0.1),
                        rng.standard_normal(nz), float(rng.standard_normal()),
                        rng.standard_normal((nz, nx)), HxN, hN, x0)
