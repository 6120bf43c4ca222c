"""Dense factorizations, the power-method range finder and singular value
thresholding (exact, approximate and weighted).

Linear operators passed to :func:`power_method` and :func:`approx_svt` only
need ``shape``, ``matmat(X)`` and ``rmatmat(Y)``; dense arrays and scipy
sparse matrices are wrapped automatically.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import aslinearoperator

__all__ = [
    "LowRankFactors",
    "qr_orthonormalize",
    "power_method",
    "svt_dense",
    "approx_svt",
    "weighted_svt_dense",
    "svt_dual_certificate",
    "thin_svd",
]

# columns below this norm are treated as zero when orthonormalizing
ZERO_COLUMN_TOL = 1e-12


@dataclass(frozen=True)
class LowRankFactors:
    """Thin factorization ``U @ diag(sigma) @ V.T``.

    ``U`` is m x k and ``V`` is n x k with orthonormal columns, ``sigma`` is
    positive and non-increasing.  ``k == 0`` encodes the zero matrix.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self):
        return int(self.sigma.shape[0])

    @classmethod
    def zeros(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))

    def to_dense(self):
        return (self.U * self.sigma) @ self.V.T

    def nuclear_norm(self):
        return float(np.sum(self.sigma))

    def at(self, rows, cols):
        """Entries ``X[rows[p], cols[p]]`` without densifying."""
        if self.rank == 0:
            return np.zeros(len(rows))
        return np.einsum("pk,pk->p", self.U[rows] * self.sigma, self.V[cols])

    def truncate(self, k):
        k = min(k, self.rank)
        return LowRankFactors(self.U[:, :k], self.sigma[:k], self.V[:, :k])


def _as_operator(Z):
    if hasattr(Z, "matmat") and hasattr(Z, "rmatmat"):
        return Z
    return aslinearoperator(Z)


def _fix_signs(U, V):
    # largest-magnitude entry of each left vector made non-negative
    # (argmax returns the lowest index on ties)
    if U.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s, V * s


def thin_svd(A):
    """Thin SVD ``A = U diag(s) V^T`` with the repository sign convention."""
    A = np.asarray(A, dtype=float)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError:
        U, s, Vt = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesvd")
    U, V = _fix_signs(U, Vt.T)
    return U, s, V


def qr_orthonormalize(M):
    """Orthonormal basis for the column span of ``M``.

    Columns with norm below ``ZERO_COLUMN_TOL`` are dropped first; the
    remaining ones go through a column-pivoted QR and numerically dependent
    directions are discarded, so the basis may have fewer columns than ``M``.
    """
    M = np.asarray(M, dtype=float)
    m = M.shape[0]
    if M.ndim != 2 or M.shape[1] == 0:
        return np.zeros((m, 0))
    keep = np.linalg.norm(M, axis=0) >= ZERO_COLUMN_TOL
    M = M[:, keep]
    if M.shape[1] == 0:
        return np.zeros((m, 0))
    Q, R, _ = scipy.linalg.qr(M, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > max(ZERO_COLUMN_TOL, ZERO_COLUMN_TOL * d[0])))
    return Q[:, :rank]


def power_method(Z, R, J):
    """Subspace iteration ``Q_j = QR(Z Z^T Q_{j-1})`` started at ``QR(Z R)``.

    Parameters
    ----------
    Z : linear operator, m x n
    R : ndarray, n x k
        Warm-start block.  More than ``min(m, n)`` columns are clamped.
    J : int
        Number of power iterations; ``J = 0`` returns ``QR(Z R)``.

    Returns
    -------
    Q : ndarray, m x k' with k' <= k
    """
    Z = _as_operator(Z)
    m, n = Z.shape
    R = np.asarray(R, dtype=float).reshape(n, -1)
    R = R[:, : min(m, n)]
    Q = qr_orthonormalize(Z.matmat(R))
    for _ in range(int(J)):
        if Q.shape[1] == 0:
            break
        Q = qr_orthonormalize(Z.matmat(Z.rmatmat(Q)))
    return Q


def _shrink(U, s, V, thresholds):
    s = s - thresholds
    keep = s > 0
    return LowRankFactors(U[:, keep], s[keep], V[:, keep])


def svt_dense(Z, lam):
    """Exact prox of ``lam * ||.||_*`` at the dense matrix ``Z``.

    Singular triples with ``sigma > lam`` survive, shrunk by ``lam``.
    """
    U, s, V = thin_svd(Z)
    keep = s > lam
    return LowRankFactors(U[:, keep], s[keep] - lam, V[:, keep])


def svt_compressed(Z, Q, lam, weights=None):
    """Threshold ``Q^T Z`` and lift the left factor back with ``Q``.

    With ``weights`` the i-th singular value is shrunk by ``lam * weights[i]``.
    """
    Z = _as_operator(Z)
    n = Z.shape[1]
    if Q.shape[1] == 0:
        return LowRankFactors(np.zeros((Z.shape[0], 0)), np.zeros(0), np.zeros((n, 0)))
    B = Z.rmatmat(Q).T
    Ub, s, V = thin_svd(B)
    if weights is None:
        out = _shrink(Ub, s, V, lam)
    else:
        w = np.asarray(weights, dtype=float)[: s.shape[0]]
        if w.shape[0] < s.shape[0]:
            w = np.concatenate([w, np.full(s.shape[0] - w.shape[0], w[-1] if w.size else 0.0)])
        out = _shrink(Ub, s, V, lam * w)
    U, V = _fix_signs(Q @ out.U, out.V)
    return LowRankFactors(U, out.sigma, V)


def approx_svt(Z, R, lam, J):
    """Approximate SVT of an implicit operator via the power method.

    ``Q`` spans an approximation of the top left singular subspace; the exact
    SVT of the small ``k x n`` matrix ``Q^T Z`` is then lifted back.  When the
    span of ``Q`` contains every left singular vector whose singular value
    exceeds ``lam`` the result is the exact SVT.
    """
    Q = power_method(Z, R, J)
    return svt_compressed(Z, Q, lam)


def _check_weights(w):
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or np.any(np.diff(w) < 0):
        raise ValueError("weights must be non-negative and non-decreasing")
    return w


def weighted_svt_dense(Z, lam, w):
    """Prox of ``lam * sum_i w_i sigma_i(X)`` for non-decreasing ``w``."""
    w = _check_weights(w)
    U, s, V = thin_svd(Z)
    if w.shape[0] < s.shape[0]:
        raise ValueError("need one weight per singular value")
    return _shrink(U, s, V, lam * w[: s.shape[0]])


def svt_dual_certificate(Z, lam, X):
    """Duality gap of ``X`` for the SVT problem at ``Z``.

    The dual optimum ``W* = U min(S, lam) V^T`` comes from the full SVD of
    ``Z`` and the dual objective is ``<W, Z> - ||W||_F^2 / 2``.  The gap is
    zero exactly at ``X = svt_dense(Z, lam)``.
    """
    Z = np.asarray(Z, dtype=float)
    Xd = X.to_dense() if isinstance(X, LowRankFactors) else np.asarray(X, dtype=float)
    s = np.linalg.svd(Z, compute_uv=False)
    primal = 0.5 * np.sum((Xd - Z) ** 2) + lam * np.sum(np.linalg.svd(Xd, compute_uv=False))
    w = np.minimum(s, lam)
    dual = np.sum(w * s) - 0.5 * np.sum(w**2)
    return max(float(primal - dual), 0.0)
