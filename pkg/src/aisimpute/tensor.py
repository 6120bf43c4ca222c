"""Tensor completion with the scaled latent nuclear norm.

The recovered tensor is a sum of D latent tensors, the d-th of which is kept
as a thin SVD of its mode-d matricization.  Mode-d matricization maps entry
``(i_1, ..., i_D)`` to row ``i_d`` and column
``sum_{l != d} i_l * prod_{m < l, m != d} I_m`` (0-based), i.e. the remaining
indices in Fortran order.  Modes are 0-based in this module.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .linalg import LowRankFactors, svt_dense
from .losses import LossKind, loss_derivative, loss_value
from .solver import (SolverDivergence, SolverTrace, TraceRecord, _deflated_warm_start,
                     _prox_step, estimate_lambda_max)
from .splr import LowRankTerm, SparseCoo, SplrOperator

__all__ = [
    "SparseTensorCoo",
    "LatentDecomposition",
    "ModeUnfoldOperator",
    "mode_index_map",
    "mode_strides",
    "matricize",
    "tensorize",
    "eval_at",
    "tensor_ais_impute",
    "default_lambda_scale",
]

MAX_ORDER = 8


def mode_strides(dims, d):
    """Column strides of the mode-``d`` matricization (zero at ``d``)."""
    strides = np.zeros(len(dims), dtype=np.int64)
    acc = 1
    for l, size in enumerate(dims):
        if l == d:
            continue
        strides[l] = acc
        acc *= int(size)
    return strides


def mode_index_map(indices, d, dims, one_based=False):
    """Row and column of a tensor entry in the mode-``d`` matricization.

    With ``one_based=True`` the indices, the mode and the result are all
    1-based.
    """
    idx = [int(i) for i in indices]
    if one_based:
        idx = [i - 1 for i in idx]
        d = d - 1
    if len(idx) != len(dims) or not 0 <= d < len(dims):
        raise ValueError("index tuple or mode does not match dims %r" % (dims,))
    for i, size in zip(idx, dims):
        if not 0 <= i < size:
            raise ValueError("index %r out of range for dims %r" % (indices, dims))
    col = int(np.dot(mode_strides(dims, d), idx))
    row = idx[d]
    return (row + 1, col + 1) if one_based else (row, col)


def matricize(X, d):
    """Dense mode-``d`` matricization, ``I_d x prod_{j != d} I_j``."""
    X = np.asarray(X)
    return np.moveaxis(X, d, 0).reshape(X.shape[d], -1, order="F")


def tensorize(A, d, dims):
    """Inverse of :func:`matricize`."""
    rest = [s for j, s in enumerate(dims) if j != d]
    return np.moveaxis(np.asarray(A).reshape([dims[d]] + rest, order="F"), 0, d)


class SparseTensorCoo:
    """Observed tensor entries, sorted lexicographically by index tuple.

    ``indices`` is an ``nnz x D`` array of 0-based subscripts.
    """

    def __init__(self, indices, vals, dims):
        dims = tuple(int(s) for s in dims)
        if not 2 <= len(dims) <= MAX_ORDER:
            raise ValueError("tensor order must lie in [2, %d]" % MAX_ORDER)
        # 64-bit column indices; refuse dims whose product would overflow them
        if math.prod(dims) >= 2**63:
            raise OverflowError("tensor too large for 64-bit index arithmetic")
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, len(dims))
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (indices.shape[0],):
            raise ValueError("one value per index tuple required")
        if indices.size:
            if np.any(indices < 0) or np.any(indices >= np.array(dims)):
                raise ValueError("index out of range for dims %r" % (dims,))
            keys = np.ravel_multi_index(tuple(indices.T), dims)
            if np.any(np.diff(keys) <= 0):
                raise ValueError("entries must be sorted lexicographically without duplicates")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite value in sparse tensor")
        self.indices = indices
        self.vals = vals
        self.dims = dims
        self._patterns = {}

    @classmethod
    def from_entries(cls, indices, vals, dims):
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, len(dims))
        keys = np.ravel_multi_index(tuple(indices.T), tuple(dims))
        order = np.argsort(keys, kind="stable")
        return cls(indices[order], np.asarray(vals, dtype=float)[order], dims)

    @property
    def nnz(self):
        return int(self.vals.shape[0])

    @property
    def order(self):
        return len(self.dims)

    def linear_keys(self):
        return np.ravel_multi_index(tuple(self.indices.T), self.dims)

    def with_values(self, vals):
        out = object.__new__(SparseTensorCoo)
        out.indices, out.dims, out._patterns = self.indices, self.dims, self._patterns
        out.vals = np.asarray(vals, dtype=float)
        return out

    def mode_coords(self, d):
        """Row and column of every entry in the mode-``d`` matricization."""
        rows = self.indices[:, d]
        cols = self.indices @ mode_strides(self.dims, d)
        return rows, cols

    def mode_shape(self, d):
        return (self.dims[d], math.prod(self.dims) // self.dims[d])

    def _pattern(self, d):
        if d not in self._patterns:
            rows, cols = self.mode_coords(d)
            perm = np.lexsort((cols, rows))
            base = SparseCoo(rows[perm], cols[perm], np.zeros(self.nnz), self.mode_shape(d))
            self._patterns[d] = (perm, base, rows, cols)
        return self._patterns[d]

    def mode_matrix(self, d, vals=None):
        """Mode-``d`` view as a sparse matrix (entries re-sorted, never densified)."""
        perm, base, _, _ = self._pattern(d)
        vals = self.vals if vals is None else np.asarray(vals, dtype=float)
        return base.with_values(vals[perm])

    def to_dense(self):
        A = np.zeros(self.dims)
        A[tuple(self.indices.T)] = self.vals
        return A


@dataclass(frozen=True)
class LatentDecomposition:
    """``X = sum_d X^d`` with ``X^d`` stored as factors of its mode-d unfolding."""

    dims: tuple
    factors: tuple

    @classmethod
    def zeros(cls, dims):
        dims = tuple(dims)
        return cls(dims, tuple(LowRankFactors.zeros(dims[d], math.prod(dims) // dims[d])
                               for d in range(len(dims))))

    @property
    def ranks(self):
        return tuple(f.rank for f in self.factors)

    def at_pattern(self, O):
        """Values at every observed position of the sparse tensor ``O``."""
        out = np.zeros(O.nnz)
        for d, f in enumerate(self.factors):
            if f.rank:
                _, _, rows, cols = O._pattern(d)
                out += f.at(rows, cols)
        return out

    def to_dense(self):
        X = np.zeros(self.dims)
        for d, f in enumerate(self.factors):
            if f.rank:
                X += tensorize(f.to_dense(), d, self.dims)
        return X

    def mode_dense(self, d):
        return tensorize(self.factors[d].to_dense(), d, self.dims)


def eval_at(decomp, indices):
    """Single entry of ``sum_d X^d``; O(sum_d k^d)."""
    total = 0.0
    for d, f in enumerate(decomp.factors):
        if f.rank:
            row, col = mode_index_map(indices, d, decomp.dims)
            total += float(np.dot(f.U[row] * f.sigma, f.V[col]))
    return total


class ModeUnfoldOperator(SplrOperator):
    """Mode-``d`` matricization of ``sparse tensor + low-rank terms``.

    The sparse tensor is re-indexed entry by entry; the low-rank terms are
    given directly in mode-``d`` coordinates.
    """

    def __init__(self, sparse_tensor, d, terms=(), vals=None):
        self.mode = d
        super().__init__(sparse_tensor.mode_matrix(d, vals), terms)

    def unfold_apply(self, v):
        return self.apply(v)

    def unfold_apply_transpose(self, u):
        return self.apply_transpose(u)


def default_lambda_scale(dims):
    """``(1, ..., 1, sqrt(I_1) / sqrt(I_D))`` for an m x m x k tensor."""
    scale = [1.0] * len(dims)
    scale[-1] = math.sqrt(dims[0]) / math.sqrt(dims[-1])
    return tuple(scale)


def _tensor_objective(loss, x_omega, O, factors, lambdas):
    fit = float(np.sum(loss_value(loss, x_omega, O.vals)))
    return fit + sum(lam * f.nuclear_norm() for lam, f in zip(lambdas, factors))


def tensor_ais_impute(O, loss, lambdas, cfg, validate=None, init=None, mu=None):
    """Accelerated inexact Soft-Impute over the latent decomposition.

    Parameters
    ----------
    O : SparseTensorCoo
    loss : LossKind or str
    lambdas : sequence of float
        Per-mode regularization weights (``cfg.lam`` is not used).
    cfg : SolverConfig
        ``lam_hat=None`` picks ``1.5 * max_d(lambda_d, sigma_1^d)`` where
        ``sigma_1^d`` is a 10-step power estimate on each unfolded gradient
        at zero.  ``svd_mode="exact-dense"`` densifies each unfolding.
    init : LatentDecomposition, optional
        Warm start (default: zero).
    mu : float, optional
        Step size.  Every mode sees the same gradient ``P_Omega(sum_d X^d -
        O)``, so the gradient over the stacked decomposition is
        ``D * rho``-Lipschitz (attained by moving all modes together) and the
        default is ``1 / (D * rho)``.

    Returns
    -------
    decomp : LatentDecomposition
    trace : SolverTrace
        ``rank`` entries are per-mode tuples.
    """
    loss = LossKind.parse(loss)
    if O.nnz == 0:
        raise ValueError("no observed entries")
    dims = O.dims
    D = len(dims)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape != (D,) or np.any(lambdas <= 0):
        raise ValueError("need one positive lambda per mode")
    if mu is None:
        mu = 1.0 / (D * loss.modulus)
    rng = np.random.default_rng(cfg.seed)

    cur = init if init is not None else LatentDecomposition.zeros(dims)
    X_t = list(cur.factors)
    X_prev = list(X_t)
    pattern = [O._pattern(d) for d in range(D)]

    def mode_values(factors):
        return [f.at(pattern[d][2], pattern[d][3]) if f.rank else np.zeros(O.nnz)
                for d, f in enumerate(factors)]

    x_t = mode_values(X_t)
    x_prev = list(x_t)
    F_t = _tensor_objective(loss, sum(x_t), O, X_t, lambdas)

    lam_hat = cfg.lam_hat
    if lam_hat is None:
        G = loss_derivative(loss, sum(x_t), O.vals)
        sig = max(estimate_lambda_max(O.mode_matrix(d, G), iters=10, seed=cfg.seed)
                  for d in range(D))
        lam_hat = 1.5 * max(float(lambdas.max()), sig)
    lam_hat = max(lam_hat, float(lambdas.max()))

    trace = SolverTrace()
    c = 1
    start = time.perf_counter()
    for t in range(1, cfg.max_iter + 1):
        theta = (c - 1.0) / (c + 2.0)
        y_hat = sum((1.0 + theta) * a - theta * b for a, b in zip(x_t, x_prev))
        # gradient step Z^d = Y^d - mu * grad; the sparse tensor is shared by all modes
        S_vals = -mu * loss_derivative(loss, y_hat, O.vals)
        lam_t = (lam_hat - lambdas) * cfg.nu ** (t - 1) + lambdas
        X_new = []
        for d in range(D):
            Z = ModeUnfoldOperator(O, d, [LowRankTerm(1.0 + theta, X_t[d]),
                                          LowRankTerm(-theta, X_prev[d])], vals=S_vals)
            if cfg.svd_mode == "exact-dense":
                Xd = svt_dense(Z.to_dense(), mu * lam_t[d])
            else:
                R = _deflated_warm_start(X_t[d].V, X_prev[d].V)
                Xd = _prox_step(Z, R, mu * lam_t[d], cfg.power_iters(t), None, "approximate",
                                rng, cfg.rank_cap if cfg.rank_cap is not None else min(Z.shape))
            X_new.append(Xd)
        x_new = mode_values(X_new)
        F_new = _tensor_objective(loss, sum(x_new), O, X_new, lambdas)
        if not math.isfinite(F_new):
            raise SolverDivergence("objective became %r at iteration %d" % (F_new, t),
                                   state={"t": t, "factors": X_t, "F_t": F_t})
        restarted = F_new > F_t
        c = 1 if restarted else c + 1
        decomp = LatentDecomposition(dims, tuple(X_new))
        valid = validate(decomp) if validate is not None else float("nan")
        trace.append(TraceRecord(t, time.perf_counter() - start, F_new,
                                 tuple(f.rank for f in X_new), float(lam_t.max()),
                                 restarted, valid))
        rel = abs(F_new - F_t) / max(abs(F_t), np.finfo(float).tiny)
        X_prev, x_prev = X_t, x_t
        X_t, x_t, F_t = X_new, x_new, F_new
        if (rel < cfg.rel_tol and not restarted
                and np.all(lam_t - lambdas <= cfg.rel_tol * lambdas)):
            break
    return LatentDecomposition(dims, tuple(X_t)), trace
