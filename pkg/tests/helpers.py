"""Independent reference computations used as test oracles.

Everything here is deliberately computed through generic dense routes
(SVD, explicit solves) that share no code with the package's kernels.
"""

import numpy as np


def random_spd(rng, n, spread=(0.3, 3.0)):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = rng.uniform(*spread, size=n)
    return Q @ np.diag(eigs) @ Q.T


def svd_weighted_pinv(A, H):
    """General minimum-H-norm pseudoinverse via L^-T pinv(A L^-T), any rank."""
    L = np.linalg.cholesky(H)
    Linv_T = np.linalg.inv(L).T
    return Linv_T @ np.linalg.pinv(A @ Linv_T)


def direct_weighted_pinv(A, H):
    """Full-row-rank formula H^-1 A^T (A H^-1 A^T)^-1 via generic solves."""
    B = np.linalg.solve(H, A.T)
    return np.linalg.solve((A @ B).T, B.T).T


def nullspace_projector(A_stack, H):
    """H-orthogonal projector onto the null space of the stacked rows."""
    n = A_stack.shape[1]
    if A_stack.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(A_stack)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size else 0
    N = Vt[rank:].T  # basis of null(A_stack)
    if N.shape[1] == 0:
        return np.zeros((n, n))
    return N @ np.linalg.solve(N.T @ H @ N, N.T @ H)
