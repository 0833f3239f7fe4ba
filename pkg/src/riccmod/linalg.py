"""Dense symmetric positive semidefinite linear algebra.

Matrices are plain 2-D float arrays. A PSD matrix is factored either by
Cholesky (numerically positive definite) or by a truncated symmetric
eigendecomposition (semidefinite). Every solve against a factorization is a
minimum-norm pseudo-solve, so singular blocks are handled by the same code
path as regular ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
import scipy.linalg as sla
from numba import njit

from .errors import (
    DimensionMismatch,
    DowndateBreaksPd,
    InnerSystemSingular,
    KindMismatch,
    NonFinite,
    NotPsd,
)

#: relative threshold (w.r.t. trace / largest eigenvalue) below which a pivot
#: or eigenvalue is treated as zero
RANK_RTOL = 1e-11
#: relative slack for accepting slightly negative eigenvalues as PSD
PSD_TOL = 1e-10
#: the same slack for matrices computed inside the recursion (G, C). They
#: inherit the rounding of the propagated P, which the closed-loop map
#: amplifies on nearly singular problems.
DERIVED_PSD_TOL = 1e-5

CHOLESKY = "cholesky"
EIGEN = "eigen"


@dataclass(frozen=True)
class PsdFactorization:
    """Factorization of a symmetric PSD matrix X.

    ``kind == "cholesky"``: X = L L^T with ``L`` lower triangular.
    ``kind == "eigen"``: X = U diag(w) U^T restricted to the retained
    eigenpairs; ``eigvals`` holds the full spectrum with truncated entries
    set to zero.
    """

    dim: int
    kind: str
    L: np.ndarray | None = None
    U: np.ndarray | None = None
    w: np.ndarray | None = None
    eigvals: np.ndarray | None = None
    rank: int = 0

    @property
    def is_cholesky(self) -> bool:
        return self.kind == CHOLESKY

    @property
    def singular(self) -> bool:
        return self.rank < self.dim

    def reassemble(self) -> np.ndarray:
        if self.is_cholesky:
            return self.L @ self.L.T
        return (self.U * self.w) @ self.U.T


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def as_finite(X, name: str = "matrix") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return X


def is_psd(X: np.ndarray, tol: float = PSD_TOL) -> bool:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return True
    w = np.linalg.eigvalsh(sym(X))
    return bool(w[0] >= -tol * (1.0 + abs(w).max()))


def _empty_factor() -> PsdFactorization:
    return PsdFactorization(0, CHOLESKY, L=np.zeros((0, 0)), rank=0)


def factor_psd(
    X, rtol: float = RANK_RTOL, atol: float = 0.0, psd_tol: float = PSD_TOL
) -> PsdFactorization:
    """Factor a symmetric PSD matrix.

    Cholesky is used when every pivot squared exceeds
    ``max(rtol * trace(X), atol)``; otherwise the matrix is
    eigendecomposed and eigenvalues at or below ``max(rtol * max_eig, atol)``
    are dropped. ``atol`` lets callers account for cancellation when X was
    formed as a difference of much larger matrices.
    """
    X = as_finite(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {X.shape}")
    n = X.shape[0]
    if n == 0:
        return _empty_factor()
    X = sym(X)
    tr = float(np.trace(X))
    if tr > 0.0:
        try:
            L = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            L = None
        if L is not None and np.min(np.diag(L)) ** 2 > max(rtol * tr, atol):
            return PsdFactorization(n, CHOLESKY, L=L, rank=n)
    w, U = np.linalg.eigh(X)
    scale = float(np.abs(w).max())
    if w[0] < -psd_tol * (1.0 + scale):
        raise NotPsd(f"smallest eigenvalue {w[0]:.3e} (norm {scale:.3e})")
    cut = max(rtol * max(w[-1], 0.0), atol)
    keep = w > cut
    eigvals = np.where(keep, w, 0.0)
    return PsdFactorization(
        n, EIGEN, U=U[:, keep], w=w[keep], eigvals=eigvals, rank=int(keep.sum())
    )


def pseudo_solve(F: PsdFactorization, B) -> np.ndarray:
    """Minimum-norm solution of X Y = B (least squares outside range(X))."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.dim:
        raise DimensionMismatch(f"factor has dim {F.dim}, rhs has {B.shape[0]} rows")
    if F.dim == 0 or B.size == 0:
        return np.zeros(B.shape)
    if F.is_cholesky:
        return sla.cho_solve((F.L, True), B, check_finite=False)
    if F.rank == 0:
        return np.zeros(B.shape)
    C = F.U.T @ B
    if B.ndim == 1:
        return F.U @ (C / F.w)
    return F.U @ (C / F.w[:, None])


def lowrank_root(Cfac: PsdFactorization, U) -> np.ndarray:
    """Return Z with Z Z^T = U C^+ U^T, Z having at most ``Cfac.dim`` columns."""
    U = np.asarray(U, dtype=float)
    if Cfac.dim == 0:
        return np.zeros((U.shape[0], 0))
    if Cfac.is_cholesky:
        return sla.solve_triangular(Cfac.L, U.T, lower=True, check_finite=False).T
    return (U @ Cfac.U) / np.sqrt(Cfac.w)


@njit(cache=True)
def _chol_rank1_inplace(L, x, sign, tol):
    # Stewart-style rotation sweep; returns False when a pivot would drop to
    # or below tol (only possible for sign < 0).
    n = L.shape[0]
    for k in range(n):
        lkk = L[k, k]
        r2 = lkk * lkk + sign * x[k] * x[k]
        if r2 <= tol:
            return False
        r = sqrt(r2)
        c = r / lkk
        s = x[k] / lkk
        L[k, k] = r
        for i in range(k + 1, n):
            lik = (L[i, k] + sign * s * x[i]) / c
            L[i, k] = lik
            x[i] = c * x[i] - s * lik
    return True


def _default_modify_tol(L: np.ndarray) -> float:
    return RANK_RTOL * float(np.sum(L * L))


def chol_modify_inplace(L: np.ndarray, Z: np.ndarray, sign: int, tol: float | None = None) -> None:
    """Apply L L^T + sign * Z Z^T column by column, overwriting L."""
    if tol is None:
        tol = _default_modify_tol(L)
    Z = np.array(Z, dtype=float, ndmin=2, order="F")
    if Z.shape[0] != L.shape[0]:
        raise DimensionMismatch("update vectors do not match factor dimension")
    for j in range(Z.shape[1]):
        x = np.ascontiguousarray(Z[:, j])
        if not _chol_rank1_inplace(L, x, float(sign), tol):
            raise DowndateBreaksPd(f"downdate column {j} destroys positive definiteness")


def _chol_rank1(F: PsdFactorization, v, sign: int, tol: float | None) -> PsdFactorization:
    if not F.is_cholesky:
        raise KindMismatch("rank-1 modification needs a Cholesky factor")
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != F.dim:
        raise DimensionMismatch(f"vector of length {v.shape[0]} for dim {F.dim}")
    L = np.array(F.L, dtype=float, order="C")
    chol_modify_inplace(L, v[:, None], sign, tol)
    return PsdFactorization(F.dim, CHOLESKY, L=L, rank=F.dim)


def chol_rank1_update(F: PsdFactorization, v, tol: float | None = None) -> PsdFactorization:
    return _chol_rank1(F, v, +1, tol)


def chol_rank1_downdate(F: PsdFactorization, v, tol: float | None = None) -> PsdFactorization:
    """Cholesky factor of L L^T - v v^T.

    Raises DowndateBreaksPd when a pivot squared falls to
    ``tol`` (default ``RANK_RTOL * trace``) or below.
    """
    return _chol_rank1(F, v, -1, tol)


def chol_append(F: PsdFactorization, g, g0, tol: float | None = None) -> PsdFactorization:
    """Bordered Cholesky: factor of [[X, g], [g^T, g0]] from the factor of X."""
    if not F.is_cholesky:
        raise KindMismatch("bordered append needs a Cholesky factor")
    g0 = np.atleast_2d(np.asarray(g0, dtype=float))
    k = g0.shape[0]
    g = np.asarray(g, dtype=float).reshape(F.dim, k)
    l21 = sla.solve_triangular(F.L, g, lower=True, check_finite=False) if F.dim else g
    S = sym(g0 - l21.T @ l21)
    if tol is None:
        tol = RANK_RTOL * (float(np.sum(F.L * F.L)) + float(np.trace(g0)))
    try:
        l22 = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise DowndateBreaksPd("appended block is not positive definite") from None
    if np.min(np.diag(l22)) ** 2 <= tol:
        raise DowndateBreaksPd("appended block is numerically singular")
    n = F.dim + k
    L = np.zeros((n, n))
    L[: F.dim, : F.dim] = F.L
    L[F.dim :, : F.dim] = l21.T
    L[F.dim :, F.dim :] = l22
    return PsdFactorization(n, CHOLESKY, L=L, rank=n)


def chol_delete(F: PsdFactorization, idx) -> PsdFactorization:
    """Cholesky factor of X with rows/columns ``idx`` removed (order kept)."""
    if not F.is_cholesky:
        raise KindMismatch("row/column deletion needs a Cholesky factor")
    L = np.array(F.L, dtype=float)
    for j in sorted(set(int(i) for i in idx), reverse=True):
        n = L.shape[0]
        x = np.ascontiguousarray(L[j + 1 :, j])
        T = np.ascontiguousarray(L[j + 1 :, j + 1 :])
        if T.shape[0]:
            _chol_rank1_inplace(T, x, 1.0, 0.0)
        Lnew = np.zeros((n - 1, n - 1))
        Lnew[:j, :j] = L[:j, :j]
        Lnew[j:, :j] = L[j + 1 :, :j]
        Lnew[j:, j:] = T
        L = Lnew
    return PsdFactorization(L.shape[0], CHOLESKY, L=L, rank=L.shape[0])


def smw_solve(F: PsdFactorization, U, Cfac: PsdFactorization, sign: int, B) -> np.ndarray:
    """Solve (X + sign * U C^+ U^T) Y = B using solves against F only.

    X must be positive definite (Cholesky kind) and so must the modified
    matrix. The inner system is k x k where k = rank(C).
    """
    if not F.is_cholesky:
        raise KindMismatch("SMW needs a Cholesky factor of the base matrix")
    B = np.asarray(B, dtype=float)
    Z = lowrank_root(Cfac, U)
    XB = pseudo_solve(F, B)
    if Z.shape[1] == 0:
        return XB
    Y = pseudo_solve(F, Z)
    S = np.eye(Z.shape[1]) + sign * (Z.T @ Y)
    if np.linalg.cond(S) > 1.0 / (Z.shape[1] * np.finfo(float).eps * 1e3):
        raise InnerSystemSingular("SMW inner system is numerically singular")
    return XB - sign * Y @ np.linalg.solve(S, Z.T @ XB)


def gsc(M, split: int, rtol: float = RANK_RTOL) -> np.ndarray:
    """Generalized Schur complement M /+ D = A - B D^+ B^T.

    ``M = [[A, B], [B^T, D]]`` with A of size ``split``.
    """
    M = as_finite(M)
    A = M[:split, :split]
    Bm = M[:split, split:]
    D = M[split:, split:]
    if D.shape[0] == 0:
        return sym(A.copy())
    Df = factor_psd(D, rtol=rtol)
    return sym(A - Bm @ pseudo_solve(Df, Bm.T))
