"""Low-rank modification of a Riccati factorization after working-set changes.

A change of the working set at stage t_m perturbs P_{t_m} by a term
V C^+ V^T of rank at most k. Moving towards t = 0 the perturbation keeps its
form: each stage either propagates it (no working-set change at that stage)
or enlarges it by the number of inputs freed or fixed there. Every stage
update costs O(k n^2) instead of the O(n^3) of a fresh Riccati step.

Sign convention: ``DOWNDATE`` (-1) is used when constraints are removed from
the working set (P decreases), ``UPDATE`` (+1) when constraints are added.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DowndateBreaksPd, RangeConditionViolated
from .linalg import (
    DERIVED_PSD_TOL,
    RANK_RTOL,
    PsdFactorization,
    chol_append,
    chol_delete,
    chol_modify_inplace,
    factor_psd,
    lowrank_root,
    pseudo_solve,
    sym,
)
from .uftoc import (
    BackwardPass,
    RiccatiFactorization,
    StageFactor,
    UftocProblem,
    backward,
    dual_forward,
    forward,
    riccati_step,
)

DOWNDATE = -1
UPDATE = +1
REMOVE = "remove"
ADD = "add"

#: C_t pivots below this fraction of C's input scale disable the
#: incremental gain update (see ``_fast_gain_ok``)
FAST_GAIN_RTOL = 1e-6
#: range(C) membership tolerance for V^T, relative to 1 + ||V||
RANGE_TOL = 1e-8


@dataclass
class Modification:
    """P~_stage = P_stage + sign * V C^+ V^T."""

    sign: int
    V: np.ndarray
    C: np.ndarray
    Cfac: PsdFactorization
    stage: int
    #: magnitude of the terms C was computed from (bounds its rounding error)
    scale: float = 0.0

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @property
    def numeric_rank(self) -> int:
        return self.Cfac.rank

    def term(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.V.shape[0], self.V.shape[0]))
        return sym(self.V @ pseudo_solve(self.Cfac, self.V.T))


def make_modification(sign, V, C, stage, scale=0.0, range_tol=RANGE_TOL) -> Modification:
    V = np.asarray(V, dtype=float)
    C = sym(np.atleast_2d(np.asarray(C, dtype=float)))
    if V.ndim == 1:
        V = V[:, None]
    Cfac = factor_psd(C, atol=RANK_RTOL * scale, psd_tol=DERIVED_PSD_TOL)
    if V.shape[1]:
        resid = V.T - C @ pseudo_solve(Cfac, V.T)
        if np.linalg.norm(resid) > range_tol * (1.0 + np.linalg.norm(V)):
            raise RangeConditionViolated(
                f"V^T not in range(C) at stage {stage}: residual {np.linalg.norm(resid):.2e}"
            )
    return Modification(sign, V, C, Cfac, stage, scale)


@dataclass
class AppendedColumns:
    """Data of k inputs that become free at one stage (appended at the end of w_t).

    ``b`` is n_x x k, ``q_xw`` n_x x k, ``q_w`` n_w x k (coupling with the
    inputs that were already free) and ``q_w0`` k x k.
    """

    b: np.ndarray
    q_xw: np.ndarray
    q_w: np.ndarray
    q_w0: np.ndarray

    @property
    def k(self) -> int:
        return self.b.shape[1]


@dataclass
class WorkingSetDelta:
    """One-kind change of the working set.

    For ``kind == "remove"`` each stage maps to ``AppendedColumns``; for
    ``kind == "add"`` each stage maps to the positions (within the current
    w_t) of the inputs that become fixed.
    """

    kind: str
    changes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (REMOVE, ADD):
            raise ValueError(f"unknown delta kind {self.kind!r}")
        for t, ch in self.changes.items():
            if self.kind == REMOVE and not isinstance(ch, AppendedColumns):
                raise ValueError(f"remove delta at stage {t} needs AppendedColumns")
            if self.kind == ADD and isinstance(ch, AppendedColumns):
                raise ValueError("mixed add/remove deltas must be applied sequentially")

    @property
    def t_m(self) -> int | None:
        return max(self.changes) if self.changes else None

    @property
    def sign(self) -> int:
        return DOWNDATE if self.kind == REMOVE else UPDATE

    def __len__(self):
        return len(self.changes)


@dataclass
class StageStep:
    factor: StageFactor
    mod: Modification
    fast_gain: bool


def _trace(X) -> float:
    return max(float(np.trace(X)), 0.0) if np.size(X) else 0.0


def _gfac_tol(G) -> float:
    return RANK_RTOL * _trace(G)


def _refactor(Gt, Gref) -> PsdFactorization:
    return factor_psd(Gt, atol=_gfac_tol(Gref), psd_tol=DERIVED_PSD_TOL)


def _downdated_factor(Gfac, Gt, Gref, Z) -> PsdFactorization:
    if not Gfac.is_cholesky or Gt.shape[0] == 0:
        return _refactor(Gt, Gref)
    L = np.array(Gfac.L, order="C")
    try:
        chol_modify_inplace(L, Z, -1, tol=_gfac_tol(Gref))
    except DowndateBreaksPd:
        return _refactor(Gt, Gref)
    return PsdFactorization(L.shape[0], "cholesky", L=L, rank=L.shape[0])


def _updated_factor(Gfac, Gt, Z) -> PsdFactorization:
    if not Gfac.is_cholesky or Gt.shape[0] == 0:
        return _refactor(Gt, Gt)
    L = np.array(Gfac.L, order="C")
    chol_modify_inplace(L, Z, +1, tol=0.0)
    return PsdFactorization(L.shape[0], "cholesky", L=L, rank=L.shape[0])


def _all_cholesky(*facs) -> bool:
    return all(f is None or f.is_cholesky for f in facs)


def _fast_gain_ok(Gfac, Gtfac, m_in, m_out) -> bool:
    """Whether the incremental gain update is safe.

    It needs positive definite G, G~ and C matrices, and C_t must not be
    tiny next to the terms it was computed from: the increment divides by
    C_t, so its rounding error grows like scale / lambda_min(C_t).
    """
    if not _all_cholesky(Gfac, Gtfac, None if m_in is None else m_in.Cfac, m_out.Cfac):
        return False
    if m_out.rank == 0:
        return True
    piv = float(np.min(np.diag(m_out.Cfac.L))) ** 2
    return piv > FAST_GAIN_RTOL * max(m_out.scale, _trace(m_out.C))


def propagate_downdate(A, B, s: StageFactor, m: Modification) -> StageStep:
    """Carry a downdate of P_{t+1} to stage t (uses the unmodified G, H)."""
    V = m.V
    AV = A.T @ V
    U = B.T @ V
    CU = pseudo_solve(m.Cfac, U.T)
    CA = pseudo_solve(m.Cfac, AV.T)
    Ft = sym(s.F - AV @ CA)
    Gt = sym(s.G - U @ CU)
    Ht = s.H - AV @ CU
    Y = pseudo_solve(s.Gfac, U)
    mod = make_modification(
        DOWNDATE, AV - s.H @ Y, m.C - U.T @ Y, m.stage - 1, scale=_trace(m.C)
    )
    Gtfac = _downdated_factor(s.Gfac, Gt, s.G, lowrank_root(m.Cfac, U))
    fast = _fast_gain_ok(s.Gfac, Gtfac, m, mod)
    if fast:
        Kt = s.K + Y @ pseudo_solve(mod.Cfac, mod.V.T)
    else:
        Kt = -pseudo_solve(Gtfac, Ht.T)
    return StageStep(StageFactor(Ft, Gt, Ht, Kt, Gtfac), mod, fast)


def propagate_update(A, B, s: StageFactor, m: Modification) -> StageStep:
    """Carry an update of P_{t+1} to stage t (uses the modified G~, H~)."""
    V = m.V
    AV = A.T @ V
    U = B.T @ V
    CU = pseudo_solve(m.Cfac, U.T)
    CA = pseudo_solve(m.Cfac, AV.T)
    Ft = sym(s.F + AV @ CA)
    Gt = sym(s.G + U @ CU)
    Ht = s.H + AV @ CU
    Gtfac = _updated_factor(s.Gfac, Gt, lowrank_root(m.Cfac, U))
    Yt = pseudo_solve(Gtfac, U)
    mod = make_modification(
        UPDATE, AV - Ht @ Yt, m.C - U.T @ Yt, m.stage - 1, scale=_trace(m.C)
    )
    fast = _fast_gain_ok(s.Gfac, Gtfac, m, mod)
    if fast:
        Kt = s.K - Yt @ pseudo_solve(mod.Cfac, mod.V.T)
    else:
        Kt = -pseudo_solve(Gtfac, Ht.T)
    return StageStep(StageFactor(Ft, Gt, Ht, Kt, Gtfac), mod, fast)


def remove_constraints_step(A, B, s: StageFactor, P_next, cols: AppendedColumns,
                            m: Modification | None, stage: int) -> StageStep:
    """Free k inputs at stage t, absorbing an incoming downdate ``m`` if any.

    The new inputs are appended after the existing free inputs. ``P_next`` is
    the unmodified P_{t+1}.
    """
    nw = B.shape[1]
    k = cols.k
    Pb = P_next @ cols.b
    h = cols.q_xw + A.T @ Pb
    g = cols.q_w + B.T @ Pb
    g0 = sym(np.atleast_2d(cols.q_w0) + cols.b.T @ Pb)
    Gb = np.block([[s.G, g], [g.T, g0]])
    Hb = np.hstack([s.H, h])
    if m is None:
        Ft, Gt, Ht = s.F, sym(Gb), Hb
        E, Cb, X, Z = g, g0, h, None
    else:
        V = m.V
        AV = A.T @ V
        Ub = np.vstack([B.T @ V, cols.b.T @ V])
        CU = pseudo_solve(m.Cfac, Ub.T)
        Ft = sym(s.F - AV @ pseudo_solve(m.Cfac, AV.T))
        Gt = sym(Gb - Ub @ CU)
        Ht = Hb - AV @ CU
        bV = Ub[nw:]
        E = np.hstack([g, Ub[:nw]])
        Cb = np.block([[g0, bV], [bV.T, m.C]])
        X = np.hstack([h, AV])
        Z = lowrank_root(m.Cfac, Ub)
    Y = pseudo_solve(s.Gfac, E)
    mod = make_modification(DOWNDATE, X - s.H @ Y, Cb - E.T @ Y, stage, scale=_trace(Cb))

    if s.Gfac.is_cholesky:
        try:
            Gtfac = chol_append(s.Gfac, g, g0)
        except DowndateBreaksPd:
            Gtfac = _refactor(Gt, Gb)
        else:
            if Z is not None:
                Gtfac = _downdated_factor(Gtfac, Gt, Gb, Z)
    else:
        Gtfac = _refactor(Gt, Gb)

    fast = _fast_gain_ok(s.Gfac, Gtfac, m, mod)
    if fast:
        J = np.hstack([-np.eye(k), np.zeros((k, mod.rank - k))])
        Kt = np.vstack([s.K, np.zeros((k, A.shape[0]))]) + np.vstack([Y, J]) @ pseudo_solve(
            mod.Cfac, mod.V.T
        )
    else:
        Kt = -pseudo_solve(Gtfac, Ht.T)
    return StageStep(StageFactor(Ft, Gt, Ht, Kt, Gtfac), mod, fast)


def _split_positions(nw: int, drop: Sequence[int]):
    drop = sorted(set(int(i) for i in drop))
    if any(i < 0 or i >= nw for i in drop):
        raise IndexError(f"fixed positions {drop} out of range for n_w = {nw}")
    keep = [i for i in range(nw) if i not in drop]
    return keep, drop


def add_constraints_step(A, B, s: StageFactor, drop: Sequence[int],
                         m: Modification | None, stage: int) -> StageStep:
    """Fix the inputs at positions ``drop`` of w_t, absorbing an incoming update.

    The remaining inputs keep their relative order.
    """
    keep, drop = _split_positions(B.shape[1], drop)
    perm = keep + drop
    n1 = len(keep)
    Gp = s.G[np.ix_(perm, perm)]
    Hp = s.H[:, perm]
    Bp = B[:, perm]
    if m is None:
        Ft, Gu, Hu, U = s.F, Gp, Hp, None
    else:
        V = m.V
        AV = A.T @ V
        U = Bp.T @ V
        CU = pseudo_solve(m.Cfac, U.T)
        Ft = sym(s.F + AV @ pseudo_solve(m.Cfac, AV.T))
        Gu = sym(Gp + U @ CU)
        Hu = Hp + AV @ CU
    Gt = sym(Gu[:n1, :n1])
    gt = Gu[:n1, n1:]
    gt0 = sym(Gu[n1:, n1:])
    Ht = Hu[:, :n1]
    ht = Hu[:, n1:]

    if s.Gfac.is_cholesky:
        Gtfac = chol_delete(s.Gfac, drop)
        if U is not None and n1:
            Gtfac = _updated_factor(Gtfac, Gt, lowrank_root(m.Cfac, U[:n1]))
    else:
        Gtfac = _refactor(Gt, Gt)

    if m is None:
        E, Cb, X = gt, gt0, ht
    else:
        bV = U[n1:]
        E = np.hstack([gt, U[:n1]])
        Cb = np.block([[gt0, bV], [bV.T, m.C]])
        X = np.hstack([ht, AV])
    Yt = pseudo_solve(Gtfac, E)
    mod = make_modification(UPDATE, X - Ht @ Yt, Cb - E.T @ Yt, stage, scale=_trace(Cb))

    fast = _fast_gain_ok(s.Gfac, Gtfac, m, mod)
    if fast:
        Kt = s.K[perm][:n1] - Yt @ pseudo_solve(mod.Cfac, mod.V.T)
    else:
        Kt = -pseudo_solve(Gtfac, Ht.T)
    return StageStep(StageFactor(Ft, Gt, Ht, Kt, Gtfac), mod, fast)


def stage_blocks_after(p: UftocProblem, delta: WorkingSetDelta, t: int):
    """(B_w, Q_xw, Q_w) of stage t once ``delta`` is applied."""
    B, Qxw, Qw = p.B[t], p.Qxw[t], p.Qw[t]
    ch = delta.changes.get(t)
    if ch is None:
        return B, Qxw, Qw
    if delta.kind == REMOVE:
        return (
            np.hstack([B, ch.b]),
            np.hstack([Qxw, ch.q_xw]),
            np.block([[Qw, ch.q_w], [ch.q_w.T, np.atleast_2d(ch.q_w0)]]),
        )
    keep, _ = _split_positions(B.shape[1], ch)
    return B[:, keep], Qxw[:, keep], Qw[np.ix_(keep, keep)]


def apply_delta(p: UftocProblem, delta: WorkingSetDelta) -> UftocProblem:
    """The problem after ``delta`` as far as the factorization is concerned.

    Linear terms of newly freed inputs are set to zero; those of newly fixed
    inputs are dropped. Use the active-set partition for exact linear terms.
    """
    B, Qxw, Qw, lw = list(p.B), list(p.Qxw), list(p.Qw), list(p.lw)
    for t, ch in delta.changes.items():
        B[t], Qxw[t], Qw[t] = stage_blocks_after(p, delta, t)
        if delta.kind == REMOVE:
            lw[t] = np.concatenate([lw[t], np.zeros(ch.k)])
        else:
            keep, _ = _split_positions(p.nw(t), ch)
            lw[t] = lw[t][keep]
    return UftocProblem(p.A, B, p.a, p.Qx, Qxw, Qw, p.lx, lw, p.c, p.QxN, p.lxN, p.cN, p.x0)


@dataclass
class ModifyReport:
    t_m: int | None
    ranks: dict = field(default_factory=dict)
    fallback: bool = False
    fallback_stage: int | None = None
    fast_gain_stages: int = 0


def modify_factorization(
    p: UftocProblem,
    f: RiccatiFactorization,
    delta: WorkingSetDelta,
    rho: float | None = 0.5,
    rtol: float = RANK_RTOL,
):
    """Modify ``f`` (the factorization of ``p``) to account for ``delta``.

    Returns a new factorization that shares every stage above t_m with ``f``,
    plus a ``ModifyReport``. When the modification rank reaches
    ``rho * n_x`` the remaining stages are re-factorized from scratch;
    ``rho=None`` disables that fallback.
    """
    report = ModifyReport(delta.t_m)
    if delta.t_m is None:
        return f, report
    out = f.copy()
    sign = delta.sign
    nx = p.nx
    m = None
    for t in range(delta.t_m, -1, -1):
        A, B = p.A[t], p.B[t]
        if report.fallback:
            Bn, Qxw, Qw = stage_blocks_after(p, delta, t)
            s, out.P[t] = riccati_step(A, Bn, p.Qx[t], Qxw, Qw, out.P[t + 1], rtol)
            out.F[t], out.G[t], out.H[t], out.K[t], out.Gfac[t] = s.F, s.G, s.H, s.K, s.Gfac
            continue
        s_old = StageFactor(f.F[t], f.G[t], f.H[t], f.K[t], f.Gfac[t])
        ch = delta.changes.get(t)
        if ch is None:
            if sign == DOWNDATE:
                step = propagate_downdate(A, B, s_old, m)
            else:
                step = propagate_update(A, B, s_old, m)
        elif delta.kind == REMOVE:
            step = remove_constraints_step(A, B, s_old, f.P[t + 1], ch, m, t)
        else:
            step = add_constraints_step(A, B, s_old, ch, m, t)
        s = step.factor
        out.F[t], out.G[t], out.H[t], out.K[t], out.Gfac[t] = s.F, s.G, s.H, s.K, s.Gfac
        m = step.mod
        out.P[t] = sym(f.P[t] + sign * m.term())
        report.ranks[t] = m.rank
        report.fast_gain_stages += int(step.fast_gain)
        if rho is not None and t > 0 and m.rank >= rho * nx:
            report.fallback = True
            report.fallback_stage = t
    return out, report


def refresh_solution(p_new: UftocProblem, f_new: RiccatiFactorization, b: BackwardPass,
                     t_m: int | None, fixed=None):
    """Re-run the backward sweep for t <= t_m only, then both forward sweeps.

    ``p_new`` is the problem after the working-set change and ``b`` the
    backward pass of the problem before it. Returns (backward, trajectory,
    multipliers or None).
    """
    if t_m is None:
        bn = b
    else:
        bn = backward(p_new, f_new, upto=t_m, base=b)
    traj = forward(p_new, f_new, bn)
    mu = dual_forward(fixed, traj) if fixed is not None else None
    return bn, traj, mu
