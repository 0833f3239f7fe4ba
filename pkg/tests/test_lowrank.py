import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riccmod.asqp import LOWER, WorkingSet
from riccmod.errors import InfeasibleOrUnbounded, RangeConditionViolated
from riccmod.generate import STRICT, gen_cftoc, gen_problem
from riccmod.lowrank import (
    DOWNDATE,
    REMOVE,
    UPDATE,
    WorkingSetDelta,
    apply_delta,
    make_modification,
    modify_factorization,
    propagate_downdate,
    propagate_update,
    refresh_solution,
)
from riccmod.uftoc import StageFactor, backward, factorize, kkt_residual

from cases import GOLDEN, delta_case, golden_chain, modify_error, partitioned_pair


def test_golden_scalar_chain():
    got = golden_chain()
    for key, want in GOLDEN.items():
        assert got[key] == pytest.approx(want, abs=1e-12), key


def test_range_condition_enforced():
    with pytest.raises(RangeConditionViolated):
        make_modification(DOWNDATE, np.array([[1.0, 1.0]]), np.diag([1.0, 0.0]), 0)


def test_delta_kinds_are_checked():
    with pytest.raises(ValueError):
        WorkingSetDelta("swap")
    with pytest.raises(ValueError):
        WorkingSetDelta(REMOVE, {0: [1]})


def test_empty_delta_is_identity():
    p = gen_problem(0, 3, 2, 2)
    f = factorize(p)
    g, rep = modify_factorization(p, f, WorkingSetDelta(REMOVE))
    assert g is f and rep.t_m is None


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_modify_matches_refactorization(seed):
    p, old, new, kind = delta_case(seed)
    up_old, up_new, delta = partitioned_pair(p, old, new)
    if delta is None:
        return
    f = factorize(up_old)
    fm, rep = modify_factorization(up_old, f, delta, rho=None)
    assert modify_error(fm, factorize(up_new)) <= 1e-8
    assert not rep.fallback


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.25, 0.5, 1.0]))
def test_fallback_keeps_accuracy(seed, rho):
    p, old, new, _ = delta_case(seed)
    up_old, up_new, delta = partitioned_pair(p, old, new)
    if delta is None:
        return
    fm, rep = modify_factorization(up_old, factorize(up_old), delta, rho=rho)
    assert modify_error(fm, factorize(up_new)) <= 1e-8
    if rep.fallback:
        assert rep.fallback_stage is not None


def test_stages_above_change_are_shared():
    p, old, new, _ = delta_case(11, kind="remove")
    up_old, _, delta = partitioned_pair(p, old, new)
    f = factorize(up_old)
    fm, _ = modify_factorization(up_old, f, delta)
    for t in range(delta.t_m + 1, p.N):
        assert fm.K[t] is f.K[t]
    assert fm.P[0] is not f.P[0]


def test_apply_delta_matches_partition():
    p, old, new, _ = delta_case(4, kind="add")
    up_old, up_new, delta = partitioned_pair(p, old, new)
    q = apply_delta(up_old, delta)
    for t in range(p.N):
        np.testing.assert_array_equal(q.B[t], up_new.B[t])
        np.testing.assert_array_equal(q.Qw[t], up_new.Qw[t])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_refresh_gives_kkt_solution(seed):
    p, old, new, _ = delta_case(seed)
    up_old, up_new, delta = partitioned_pair(p, old, new)
    if delta is None:
        return
    f = factorize(up_old)
    try:
        b = backward(up_old, f)
        fm, _ = modify_factorization(up_old, f, delta)
        _, traj, _ = refresh_solution(up_new, fm, b, delta.t_m)
    except InfeasibleOrUnbounded:  # freeing inputs can make a semidefinite instance unbounded
        return
    assert kkt_residual(up_new, traj) <= 1e-8


def _seeded_chain(seed, k, sign, N=20, n=6):
    """Propagate a rank-k modification of P_N through all N stages."""
    rng = np.random.default_rng(seed)
    p = gen_problem(seed, N, n, 3)
    V = rng.standard_normal((n, k))
    if sign == DOWNDATE:
        p.QxN = p.QxN + V @ V.T
    f = factorize(p)
    m = make_modification(sign, V, np.eye(k), N, scale=float(k))
    mods = []
    for t in range(N - 1, -1, -1):
        s = StageFactor(f.F[t], f.G[t], f.H[t], f.K[t], f.Gfac[t])
        step = (propagate_downdate if sign == DOWNDATE else propagate_update)(
            p.A[t], p.B[t], s, m)
        m = step.mod
        mods.append(m)
    return mods


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1, 2, 3]), st.sampled_from([DOWNDATE, UPDATE]))
def test_modification_rank_never_grows(seed, k, sign):
    for m in _seeded_chain(seed, k, sign):
        assert m.rank == k
        assert m.numeric_rank <= k


@pytest.mark.parametrize("k", [1, 2, 3])
def test_removal_rank_over_horizon(k):
    N = 20
    p = gen_cftoc(k, N, 6, 4, STRICT)
    old = WorkingSet.from_fixed(p, [{i: LOWER for i in range(k)} if t == N - 1 else {}
                                    for t in range(N)])
    new = old.release([(N - 1, i) for i in range(k)])
    up_old, up_new, delta = partitioned_pair(p, old, new)
    fm, rep = modify_factorization(up_old, factorize(up_old), delta, rho=None)
    assert set(rep.ranks.values()) == {k}
    assert modify_error(fm, factorize(up_new)) <= 1e-8
