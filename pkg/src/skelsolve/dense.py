"""Dense primitives: interpolative decomposition and pivoted LU.

The ID selects skeleton columns S of a matrix A and an interpolation
matrix T with A[:, R] ~ A[:, S] T, computed from one column-pivoted QR.
Rank is the number of pivots with |R_kk| > tol * |R_00|; ties in the
pivoting are broken by LAPACK geqp3 (largest remaining column norm, lowest
index first), which makes the result deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class SingularPivotError(RuntimeError):
    """Exact zero pivot during LU elimination."""

    def __init__(self, index: int):
        super().__init__(f"zero pivot at elimination step {index}")
        self.index = index


@dataclass
class IDResult:
    """Column interpolative decomposition A[:, R] ~ A[:, S] T."""

    skeleton: np.ndarray   # ordered column indices S
    redundant: np.ndarray  # ordered column indices R
    T: np.ndarray          # (|S|, |R|)
    achieved_error: float  # Frobenius norm of the trailing QR block

    @property
    def rank(self) -> int:
        return len(self.skeleton)


class PivotedQR:
    """Column-pivoted QR of a matrix, truncatable to any rank.

    Kept around so callers can enlarge the skeleton (move indices from R
    into S) without re-factorizing, as needed when an X_RR block turns out
    ill-conditioned.
    """

    def __init__(self, A: np.ndarray):
        A = np.ascontiguousarray(A, dtype=float)
        self.n_cols = A.shape[1]
        if A.size == 0:
            self.R = np.zeros((0, A.shape[1]))
            self.perm = np.arange(A.shape[1])
            self.diag = np.zeros(0)
            return
        if A.shape[0] > 2 * A.shape[1]:
            # column norms and pivot order are invariant under an orthogonal
            # row transform, so reduce with a fast unpivoted QR first
            A = sla.qr(A, mode="r", check_finite=False)[0]
        _, R, perm = sla.qr(A, mode="economic", pivoting=True, check_finite=False)
        self.R = R
        self.perm = perm
        self.diag = np.abs(np.diag(R))

    def rank_for_tol(self, tol: float) -> int:
        if len(self.diag) == 0 or self.diag[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.diag > tol * self.diag[0]))

    def take(self, k: int) -> IDResult:
        k = min(k, len(self.diag), self.n_cols)
        S = self.perm[:k].copy()
        R = self.perm[k:].copy()
        if k == 0:
            T = np.zeros((0, self.n_cols))
        else:
            T = sla.solve_triangular(self.R[:k, :k], self.R[:k, k:], lower=False)
        err = float(np.linalg.norm(self.R[k:, k:])) if self.R.shape[0] > k else 0.0
        return IDResult(S, R, T, err)


def interpolative_decomposition(A: np.ndarray, tol: float) -> IDResult:
    """One-sided ID of the columns of A at relative tolerance tol.

    A zero matrix yields an empty skeleton (every column redundant, T
    empty). Deterministic for identical inputs.
    """
    if not (0.0 < tol < 1.0):
        raise ValueError("tol must lie in (0, 1)")
    qr = PivotedQR(A)
    return qr.take(qr.rank_for_tol(tol))


def two_sided_id(A_in: np.ndarray, A_out: np.ndarray, tol: float) -> IDResult:
    """Single (S, R, T) valid for incoming and outgoing interactions.

    A_in holds interactions with the block as sources (columns = block);
    A_out the transposed outgoing interactions, same column count. The two
    are stacked and one ID is computed, per the nonsymmetric scheme.
    """
    if A_in.shape[1] != A_out.shape[1]:
        raise ValueError("A_in and A_out must share the column dimension")
    return interpolative_decomposition(np.vstack([A_in, A_out]), tol)


class PLU:
    """Partially pivoted LU with conditioning surveillance.

    Raises SingularPivotError at exact zero pivots, carrying the pivot
    index so the caller can migrate that index out of the redundant set.
    """

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = A.shape[0]
        if self.n == 0:
            self.lu_piv = None
            self.pivot_ratio = 1.0
            return
        self.lu_piv = sla.lu_factor(A, check_finite=False)
        d = np.abs(np.diag(self.lu_piv[0]))
        zero = np.flatnonzero(d == 0.0)
        if len(zero):
            raise SingularPivotError(int(zero[0]))
        self.pivot_ratio = float(d.min() / d.max())

    def solve(self, B, trans: int = 0) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.n:
            raise ValueError("dimension mismatch")
        if self.n == 0:
            return B.copy()
        return sla.lu_solve(self.lu_piv, B, trans=trans, check_finite=False)


def plu(A: np.ndarray) -> PLU:
    return PLU(A)
