"""Sparse observations and the implicit "sparse plus low-rank" operator."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import LowRankFactors

__all__ = ["SparseCoo", "LowRankTerm", "SplrOperator", "build_accel_iterate"]

MAX_TERMS = 3


@dataclass(frozen=True)
class SparseCoo:
    """Sparse matrix in coordinate form, entries sorted by (row, col).

    Indices are 0-based.  Use :meth:`from_entries` to build one from
    unsorted triplets; the constructor itself validates but does not sort.
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    shape: tuple
    _indptr: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m, n = self.shape
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=float)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols and vals must be 1-d arrays of equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
                raise ValueError("index out of range for shape %r" % (self.shape,))
            key = rows * n + cols
            if np.any(np.diff(key) <= 0):
                raise ValueError("entries must be sorted by (row, col) without duplicates")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite value in sparse matrix")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)
        object.__setattr__(self, "shape", (int(m), int(n)))
        indptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=m), out=indptr[1:])
        object.__setattr__(self, "_indptr", indptr)

    @classmethod
    def from_entries(cls, rows, cols, vals, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        order = np.lexsort((cols, rows))
        return cls(rows[order], cols[order], vals[order], tuple(shape))

    @property
    def nnz(self):
        return int(self.vals.shape[0])

    def with_values(self, vals):
        """Same sparsity pattern, new values."""
        out = object.__new__(SparseCoo)
        vals = np.asarray(vals, dtype=float)
        if vals.shape != self.vals.shape:
            raise ValueError("value array does not match the pattern")
        for name in ("rows", "cols", "shape", "_indptr"):
            object.__setattr__(out, name, getattr(self, name))
        object.__setattr__(out, "vals", vals)
        return out

    def to_csr(self):
        return sp.csr_matrix((self.vals, self.cols, self._indptr), shape=self.shape)

    def to_dense(self):
        A = np.zeros(self.shape)
        A[self.rows, self.cols] = self.vals
        return A

    def frobenius_norm(self):
        return float(np.sqrt(np.sum(self.vals**2)))


@dataclass(frozen=True)
class LowRankTerm:
    scale: float
    factors: LowRankFactors


class SplrOperator:
    """``sparse + sum_i scale_i * U_i diag(sigma_i) V_i^T`` kept implicit.

    Products cost O(nnz + sum_i r_i (m + n)).  ``counter``, when given to the
    product methods, is a one-element list accumulating multiply-adds.
    """

    def __init__(self, sparse, terms=()):
        terms = tuple(t for t in terms if t.factors.rank > 0 and t.scale != 0.0)
        if len(terms) > MAX_TERMS:
            raise ValueError("at most %d low-rank terms" % MAX_TERMS)
        for t in terms:
            if t.factors.shape != sparse.shape:
                raise ValueError("term shape %r does not match %r" % (t.factors.shape, sparse.shape))
        self.sparse = sparse
        self.terms = terms
        self.shape = sparse.shape
        self._csr = sparse.to_csr()

    def _count(self, counter, ncols):
        if counter is not None:
            m, n = self.shape
            ops = self.sparse.nnz + sum(t.factors.rank * (m + n + 1) for t in self.terms)
            counter[0] += ops * ncols

    def matmat(self, X, counter=None):
        X = np.asarray(X, dtype=float)
        out = self._csr @ X
        for t in self.terms:
            f = t.factors
            out = out + (t.scale * f.U) @ (f.sigma[:, None] * (f.V.T @ X))
        self._count(counter, X.shape[1] if X.ndim == 2 else 1)
        return out

    def rmatmat(self, Y, counter=None):
        Y = np.asarray(Y, dtype=float)
        out = self._csr.T @ Y
        for t in self.terms:
            f = t.factors
            out = out + (t.scale * f.V) @ (f.sigma[:, None] * (f.U.T @ Y))
        self._count(counter, Y.shape[1] if Y.ndim == 2 else 1)
        return out

    def apply(self, v, counter=None):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.shape[1],):
            raise ValueError("expected a vector of length %d" % self.shape[1])
        return self.matmat(v[:, None], counter)[:, 0]

    def apply_transpose(self, u, counter=None):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.shape[0],):
            raise ValueError("expected a vector of length %d" % self.shape[0])
        return self.rmatmat(u[:, None], counter)[:, 0]

    def to_dense(self):
        A = self.sparse.to_dense()
        for t in self.terms:
            A += t.scale * t.factors.to_dense()
        return A


def build_accel_iterate(S, X_t, X_prev, theta, mu):
    """Operator for ``(1 + theta) X_t - theta X_prev - mu S``."""
    sparse = S.with_values(-mu * S.vals)
    return SplrOperator(sparse, [LowRankTerm(1.0 + theta, X_t), LowRankTerm(-theta, X_prev)])
