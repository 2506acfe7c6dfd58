"""Dense kernels shared by the hierarchy solvers.

Weighted pseudoinverses, null-space projectors, QR-based inversion,
rank-one updates of row-augmented pseudoinverses and rank estimation.
Everything here assumes small dense matrices (n <= 64) and a strictly
positive-definite weight.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, qr, solve_triangular

# Condition estimate beyond which the damped pseudoinverse kicks in.
DAMPING_CONDITION_LIMIT = 1e8
# Damping factor, relative to the largest entry of A H^-1 A^T; bounds the
# directional gain of the damped inverse to about 1/(2 sqrt(DAMPING_SCALE))
DAMPING_SCALE = 1e-2
# Default relative tolerance for rank decisions.
DEFAULT_RANK_TOL = 1e-8
# Relative threshold below which an appended row counts as dependent.
DEFAULT_DEPENDENCE_TOL = 1e-9


class LinalgError(ValueError):
    """Structurally invalid input: dimension mismatch or bad weight matrix."""


class DependentRowError(RuntimeError):
    """Appending this row would leave no redundancy to exploit."""


# --------------------------------------------------------------------------
# Instrumentation: tests assert structural properties (which factorizations
# run, estimated flop counts) by recording events through this hook.

_RECORDERS: list["OperationRecorder"] = []


class OperationRecorder:
    def __init__(self):
        self.events: list[tuple[str, tuple, float]] = []

    def record(self, kind: str, shape: tuple, flops: float) -> None:
        self.events.append((kind, shape, flops))

    def total_flops(self) -> float:
        return sum(e[2] for e in self.events)

    def kinds(self) -> set:
        return {e[0] for e in self.events}


@contextmanager
def record_operations():
    """Collect factorization/inversion events from this thread's linalg calls."""
    rec = OperationRecorder()
    _RECORDERS.append(rec)
    try:
        yield rec
    finally:
        _RECORDERS.remove(rec)


def _record(kind: str, shape: tuple, flops: float) -> None:
    for rec in _RECORDERS:
        rec.record(kind, shape, flops)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric positive-definite weight with cached inverse and Cholesky factor."""

    matrix: np.ndarray
    inverse: np.ndarray
    cholesky: np.ndarray  # lower triangular L with H = L L^T
    is_identity: bool = False

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, n: int) -> "WeightMatrix":
        eye = np.eye(n)
        return cls(matrix=eye, inverse=eye, cholesky=eye, is_identity=True)

    @classmethod
    def from_matrix(cls, H, *, validate: bool = True) -> "WeightMatrix":
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise LinalgError(f"weight must be square, got shape {H.shape}")
        scale = max(1.0, np.abs(H).max())
        if validate and np.abs(H - H.T).max() > 1e-10 * scale:
            raise LinalgError("weight matrix is not symmetric")
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise LinalgError("weight matrix is not positive definite") from exc
        _record("cholesky", H.shape, H.shape[0] ** 3 / 3.0)
        inv = cho_solve((L, True), np.eye(H.shape[0]))
        if validate and np.abs(H @ inv - np.eye(H.shape[0])).max() > 1e-8:
            raise LinalgError("weight matrix inverse check failed (ill-conditioned)")
        return cls(matrix=H, inverse=inv, cholesky=L)

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Return H^-1 B."""
        if self.is_identity:
            return np.array(B, dtype=float, copy=True)
        return cho_solve((self.cholesky, True), B)


@dataclass(frozen=True)
class PinvResult:
    pinv: np.ndarray
    rank: int
    damped: bool


@dataclass(frozen=True)
class QrFactor:
    """Full orthogonal factor [Y Z] and triangular R of L^-1 A^T."""

    Y: np.ndarray  # n x m, orthonormal columns
    Z: np.ndarray  # n x (n-m), orthonormal complement
    R: np.ndarray  # m x m, upper triangular


def _check_pinv_input(A: np.ndarray, W: WeightMatrix) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise LinalgError(f"expected a matrix, got ndim={A.ndim}")
    m, n = A.shape
    if n != W.n:
        raise LinalgError(f"matrix has {n} columns but weight is {W.n}x{W.n}")
    if m > n:
        raise LinalgError(f"more rows ({m}) than columns ({n}): not a wide matrix")
    return A


def weighted_pinv(A, W: WeightMatrix, *, rank_tol: float = DEFAULT_RANK_TOL) -> PinvResult:
    """Minimum-H-norm right inverse H^-1 A^T (A H^-1 A^T)^-1 of a wide matrix.

    Falls back to a damped inverse of A H^-1 A^T when its condition estimate
    exceeds ``DAMPING_CONDITION_LIMIT``; the result is then flagged.
    """
    A = _check_pinv_input(A, W)
    m, n = A.shape
    if m == 0:
        return PinvResult(pinv=np.zeros((n, 0)), rank=0, damped=False)
    B = W.solve(A.T)  # H^-1 A^T, n x m
    S = A @ B  # A H^-1 A^T, m x m symmetric
    svals = np.linalg.svd(S, compute_uv=False)
    smax = svals[0]
    if smax == 0.0:
        rank = 0
    else:
        rank = int(np.sum(svals > rank_tol * smax))
    damped = rank < m or (svals[-1] == 0.0) or (smax / svals[-1] > DAMPING_CONDITION_LIMIT)
    if damped:
        S = S + (DAMPING_SCALE * max(np.abs(S).max(), 1e-300)) * np.eye(m)
    _record("dense_inverse", (m, m), 2.0 * m ** 3 / 3.0 + 2.0 * n * m)
    pinv = np.linalg.solve(S, B.T).T
    return PinvResult(pinv=pinv, rank=rank, damped=damped)


def qr_factor(A, W: WeightMatrix) -> QrFactor:
    """Full QR factorization of L^-1 A^T, where H = L L^T."""
    A = _check_pinv_input(A, W)
    m, n = A.shape
    if W.is_identity:
        B = A.T.copy()
    else:
        B = solve_triangular(W.cholesky, A.T, lower=True)
        _record("triangular_solve", (n, m), float(n * n * m))
    Q, R = qr(B, mode="full")
    _record("qr", (n, m), 2.0 * n * m * m)
    return QrFactor(Y=Q[:, :m], Z=Q[:, m:], R=R[:m, :m])


def qr_weighted_pinv(A, W: WeightMatrix, *, rank_tol: float = DEFAULT_RANK_TOL) -> PinvResult:
    """Same contract as :func:`weighted_pinv`, computed through a QR route.

    After the factorization only triangular solves are needed.  Rank-deficient
    inputs fall back to the damped dense path and are flagged.
    """
    A = _check_pinv_input(A, W)
    m, n = A.shape
    if m == 0:
        return PinvResult(pinv=np.zeros((n, 0)), rank=0, damped=False)
    if W.is_identity:
        B = A.T.copy()
    else:
        B = solve_triangular(W.cholesky, A.T, lower=True)
        _record("triangular_solve", (n, m), float(n * n * m))
    Q, R = qr(B, mode="economic")
    _record("qr", (n, m), 2.0 * n * m * m)
    diag = np.abs(np.diag(R))
    dmax = diag.max() if diag.size else 0.0
    if dmax == 0.0 or diag.min() <= rank_tol * dmax:
        res = weighted_pinv(A, W, rank_tol=rank_tol)
        return PinvResult(pinv=res.pinv, rank=res.rank, damped=True)
    # A^{+H} = L^-T Y R^-T
    YRinvT = solve_triangular(R, Q.T, lower=False).T  # Y R^-T, n x m
    _record("triangular_solve", (m, m), float(m * m * n))
    if W.is_identity:
        pinv = YRinvT
    else:
        pinv = solve_triangular(W.cholesky.T, YRinvT, lower=False)
        _record("triangular_solve", (n, n), float(n * n * m))
    return PinvResult(pinv=pinv, rank=m, damped=False)


def projector_step(P_prev: np.ndarray, A_k: np.ndarray, pinv_AkP: np.ndarray) -> np.ndarray:
    """One recursion step of the augmented null-space projector.

    Returns (I - pinv_AkP A_k) P_prev, the projector that additionally
    annihilates the rows of A_k.
    """
    n = P_prev.shape[0]
    if A_k.shape[1] != n or pinv_AkP.shape != (n, A_k.shape[0]):
        raise LinalgError("projector_step: inconsistent dimensions")
    if A_k.shape[0] == 0:
        return P_prev.copy()
    return P_prev - pinv_AkP @ (A_k @ P_prev)


def rank_estimate(A, tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if not 0.0 < tol < 1.0:
        raise LinalgError(f"rank tolerance must be in (0, 1), got {tol}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    svals = np.linalg.svd(A, compute_uv=False)
    if svals[0] == 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


# --------------------------------------------------------------------------
# Row-augmented pseudoinverse with rank-one updates.


@dataclass
class AugmentedPinv:
    """Pseudoinverse of (rows @ projector), maintained under row appends.

    ``projector`` is fixed at construction (the null-space projector of the
    higher-priority levels); appended rows extend ``rows``.  The cached
    ``pinv`` stays consistent through rank-one updates and can be rebuilt
    from scratch with :meth:`refresh`.
    """

    rows: np.ndarray
    projector: np.ndarray
    weight: WeightMatrix
    pinv: np.ndarray = field(default=None)  # type: ignore[assignment]
    updates: int = 0
    damped: bool = False

    def __post_init__(self):
        if self.pinv is None:
            self.refresh()

    @property
    def effective(self) -> np.ndarray:
        return self.rows @ self.projector

    def refresh(self) -> None:
        res = qr_weighted_pinv(self.effective, self.weight)
        self.pinv = res.pinv
        self.damped = res.damped
        self.updates = 0

    def residual(self) -> float:
        B = self.effective
        if B.shape[0] == 0:
            return 0.0
        return float(np.abs(B @ self.pinv @ B - B).max())


def rank_one_append(
    state: AugmentedPinv,
    c_row: np.ndarray,
    P_hat_k: np.ndarray,
    W: WeightMatrix,
    *,
    dependence_tol: float = DEFAULT_DEPENDENCE_TOL,
) -> tuple[np.ndarray, AugmentedPinv]:
    """Append one row to the tracked stack through a rank-one update.

    Returns the update direction ``chi`` (the minimum-H-norm vector with
    c_row . chi = 1 inside the remaining free subspace ``P_hat_k``) and the
    updated state.  Raises :class:`DependentRowError` when the projected row
    vanishes, i.e. no redundancy is left to enforce the new constraint.
    """
    c_row = np.asarray(c_row, dtype=float).reshape(-1)
    chi = chi_update_vector(c_row, P_hat_k, W, dependence_tol=dependence_tol)
    cG = c_row @ state.pinv
    new_pinv = np.hstack([state.pinv - np.outer(chi, cG), chi[:, None]])
    new_state = AugmentedPinv(
        rows=np.vstack([state.rows, c_row[None, :]]),
        projector=state.projector,
        weight=W,
        pinv=new_pinv,
        updates=state.updates + 1,
        damped=state.damped,
    )
    return chi, new_state


def chi_update_vector(
    c_row: np.ndarray,
    P_hat_k: np.ndarray,
    W: WeightMatrix,
    *,
    dependence_tol: float = DEFAULT_DEPENDENCE_TOL,
) -> np.ndarray:
    """Weighted pseudoinverse of the single projected row c_row^T P_hat_k."""
    c_row = np.asarray(c_row, dtype=float).reshape(-1)
    projected = P_hat_k.T @ c_row
    c_norm = np.linalg.norm(c_row)
    if np.linalg.norm(projected) <= dependence_tol * max(c_norm, 1.0):
        raise DependentRowError("projected row is numerically zero: no redundancy left")
    v = W.solve(projected)
    denom = float(c_row @ v)
    if denom <= 0.0:
        raise DependentRowError("projected row has vanishing weighted norm")
    _record("row_pinv", (1, c_row.size), 2.0 * c_row.size ** 2)
    return v / denom
