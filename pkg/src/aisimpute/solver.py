"""Accelerated inexact Soft-Impute for matrix completion, plus the plain
Soft-Impute and exact-SVT accelerated baselines."""

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import (LowRankFactors, power_method, qr_orthonormalize, svt_compressed, svt_dense,
                     weighted_svt_dense)
from .losses import LossKind, loss_derivative, loss_value
from .splr import LowRankTerm, SplrOperator

__all__ = [
    "SolverConfig",
    "TraceRecord",
    "SolverTrace",
    "SolverDivergence",
    "DensificationRefused",
    "ais_impute",
    "soft_impute",
    "apg_exact",
    "estimate_lambda_max",
]

log = logging.getLogger(__name__)

RANK_GROWTH = 5
DEFLATION_TOL = 1e-10


class SolverDivergence(ArithmeticError):
    """Raised when the objective becomes NaN or infinite.

    ``state`` holds the last finite iterate and the iteration counter.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DensificationRefused(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tunables shared by all matrix and tensor solvers.

    ``lam_hat=None`` starts continuation at the smallest value that zeroes the
    first step (estimated with 20 power iterations).  ``J`` is the number of
    power iterations per step; ``j_schedule="increasing"`` uses ``J = t``.
    """

    lam: float
    lam_hat: float = None
    nu: float = 0.7
    J: int = 3
    max_iter: int = 500
    rel_tol: float = 1e-4
    svd_mode: str = "approximate"
    seed: int = 0
    rank_cap: int = None
    j_schedule: str = "fixed"
    dense_cap: int = 4_000_000

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 < self.nu < 1:
            raise ValueError("nu must lie in (0, 1)")
        if self.lam_hat is not None and self.lam_hat < self.lam:
            raise ValueError("lam_hat must not be below lam")
        if self.svd_mode not in ("approximate", "exact-dense"):
            raise ValueError("svd_mode must be 'approximate' or 'exact-dense'")
        if self.j_schedule not in ("fixed", "increasing"):
            raise ValueError("j_schedule must be 'fixed' or 'increasing'")
        if self.J < 0 or self.max_iter < 1:
            raise ValueError("J must be >= 0 and max_iter >= 1")

    def power_iters(self, t):
        return t if self.j_schedule == "increasing" else self.J


@dataclass
class TraceRecord:
    iter: int
    seconds: float
    objective: float
    rank: object
    lambda_t: float
    restart: bool
    valid_metric: float = float("nan")


CSV_COLUMNS = ["iter", "seconds", "objective", "rank", "lambda_t", "restart", "valid_metric"]


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.iter <= self.records[-1].iter:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    @property
    def n_iter(self):
        return len(self.records)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                rank = r.rank if isinstance(r.rank, int) else ";".join(str(k) for k in r.rank)
                w.writerow([r.iter, repr(float(r.seconds)), repr(float(r.objective)), rank,
                            repr(float(r.lambda_t)), int(r.restart),
                            repr(float(r.valid_metric))])

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rank = tuple(int(k) for k in row["rank"].split(";"))
                trace.append(TraceRecord(
                    int(row["iter"]), float(row["seconds"]), float(row["objective"]),
                    rank[0] if len(rank) == 1 else rank, float(row["lambda_t"]),
                    bool(int(row["restart"])), float(row["valid_metric"])))
        return trace


def estimate_lambda_max(G, iters=20, seed=0):
    """Power estimate of the largest singular value of a sparse matrix."""
    rng = np.random.default_rng(seed)
    op = SplrOperator(G)
    v = rng.standard_normal(G.shape[1])
    s = 0.0
    for _ in range(iters):
        u = op.apply(v)
        nu_ = np.linalg.norm(u)
        if nu_ == 0:
            return 0.0
        v = op.apply_transpose(u / nu_)
        s = np.linalg.norm(v)
        if s == 0:
            return 0.0
        v /= s
    return float(s)


def _deflated_warm_start(V_t, V_prev):
    if V_prev.shape[1] and V_t.shape[1]:
        V_prev = V_prev - V_t @ (V_t.T @ V_prev)
    if V_prev.shape[1]:
        V_prev = V_prev[:, np.linalg.norm(V_prev, axis=0) >= DEFLATION_TOL]
    return qr_orthonormalize(np.hstack([V_t, V_prev]))


def _extend_basis(R, n, extra, rng):
    G = rng.standard_normal((n, extra))
    if R.shape[1]:
        G -= R @ (R.T @ G)
    return qr_orthonormalize(np.hstack([R, G]))


def _prox_step(Z, R, thresh, J, weights, mode, rng, rank_cap):
    """One (approximate) SVT of ``Z``, growing the warm-start block until
    the threshold becomes active or the block spans the whole space."""
    m, n = Z.shape
    kmax = min(m, n)
    if mode == "exact-dense":
        Zd = Z.to_dense()
        if weights is None:
            X = svt_dense(Zd, thresh)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape[0] < kmax:
                w = np.concatenate([w, np.full(kmax - w.shape[0], w[-1])])
            X = weighted_svt_dense(Zd, thresh, w[:kmax])
        return X.truncate(rank_cap) if rank_cap is not None else X
    if R.shape[1] == 0:
        R = _extend_basis(R, n, RANK_GROWTH, rng)
    while True:
        Q = power_method(Z, R, J)
        X = svt_compressed(Z, Q, thresh, weights)
        if X.rank < Q.shape[1] or R.shape[1] >= kmax or Q.shape[1] < R.shape[1]:
            break
        if rank_cap is not None and X.rank >= rank_cap:
            break
        R = _extend_basis(R, n, min(RANK_GROWTH, kmax - R.shape[1]), rng)
    return X.truncate(rank_cap) if rank_cap is not None else X


def _accelerated(O, loss, cfg, *, accelerate=True, continuation=True, weights=None,
                 tnn_pair=None, init=None, validate=None, mu=None):
    """Shared proximal-gradient loop.

    ``weights`` switches the prox to weighted shrinkage; ``tnn_pair=(A, B)``
    adds the linear term ``-lam tr(A^T X B)`` to the objective.  Returns
    ``(X_last, trace, X_best, F_best)``.
    """
    loss = LossKind.parse(loss)
    m, n = O.shape
    lam = cfg.lam
    if mu is None:
        mu = 1.0 / loss.modulus
    rng = np.random.default_rng(cfg.seed)
    rank_cap = cfg.rank_cap if cfg.rank_cap is not None else min(m, n)
    w_arr = None if weights is None else np.asarray(weights, dtype=float)

    if tnn_pair is not None:
        A, B = tnn_pair
        if A.shape[1] == 0:
            tnn_pair = None
    tnn_term = None
    if tnn_pair is not None:
        tnn_term = LowRankTerm(mu * lam, LowRankFactors(A, np.ones(A.shape[1]), B))

    def reg(X):
        if w_arr is None:
            val = X.nuclear_norm()
        else:
            k = X.rank
            w = w_arr[:k] if w_arr.shape[0] >= k else np.concatenate(
                [w_arr, np.full(k - w_arr.shape[0], w_arr[-1])])
            val = float(np.dot(w, X.sigma))
        if tnn_pair is not None and X.rank:
            val -= float(np.sum(X.sigma * np.sum((A.T @ X.U) * (B.T @ X.V), axis=0)))
        return val

    def F(X, x_omega=None):
        if x_omega is None:
            x_omega = X.at(O.rows, O.cols)
        return float(np.sum(loss_value(loss, x_omega, O.vals)) + lam * reg(X))

    X_t = init if init is not None else LowRankFactors.zeros(m, n)
    X_prev = X_t
    F_t = F(X_t)
    X_best, F_best = X_t, F_t
    x_t = X_t.at(O.rows, O.cols)
    x_prev = x_t

    lam_hat = cfg.lam_hat
    if not continuation:
        lam_hat = lam
    elif lam_hat is None:
        G = O.with_values(loss_derivative(loss, x_t, O.vals))
        lam_hat = max(estimate_lambda_max(G, seed=cfg.seed), lam)

    trace = SolverTrace()
    c = 1
    start = time.perf_counter()
    for t in range(1, cfg.max_iter + 1):
        lam_t = (lam_hat - lam) * cfg.nu ** (t - 1) + lam
        theta = (c - 1.0) / (c + 2.0) if accelerate else 0.0

        y = (1.0 + theta) * x_t - theta * x_prev
        S = O.with_values(-mu * loss_derivative(loss, y, O.vals))
        terms = [LowRankTerm(1.0 + theta, X_t), LowRankTerm(-theta, X_prev)]
        if tnn_term is not None:
            terms.append(tnn_term)
        Z = SplrOperator(S, terms)

        R = _deflated_warm_start(X_t.V, X_prev.V)
        X_new = _prox_step(Z, R, mu * lam_t, cfg.power_iters(t), w_arr, cfg.svd_mode,
                           rng, rank_cap)
        x_new = X_new.at(O.rows, O.cols)
        F_new = F(X_new, x_new)
        if not math.isfinite(F_new):
            raise SolverDivergence("objective became %r at iteration %d" % (F_new, t),
                                   state={"t": t, "X_t": X_t, "X_prev": X_prev, "F_t": F_t})

        restarted = F_new > F_t
        c = 1 if restarted else c + 1
        if F_new < F_best:
            X_best, F_best = X_new, F_new

        valid = validate(X_new) if validate is not None else float("nan")
        trace.append(TraceRecord(t, time.perf_counter() - start, F_new, X_new.rank,
                                 lam_t, restarted, valid))

        rel = abs(F_new - F_t) / max(abs(F_t), np.finfo(float).tiny)
        X_prev, x_prev = X_t, x_t
        X_t, x_t, F_t = X_new, x_new, F_new
        # no early exit while continuation is still moving lam_t, nor on a
        # restart step, whose small change reflects momentum overshoot
        if rel < cfg.rel_tol and not restarted and (lam_t - lam) <= cfg.rel_tol * lam:
            break
    log.debug("solver stopped after %d iterations, F=%g", len(trace), F_t)
    return X_t, trace, X_best, F_best


def ais_impute(O, loss, cfg, validate=None, init=None):
    """Accelerated inexact Soft-Impute.

    Parameters
    ----------
    O : SparseCoo
        Observed training entries.
    loss : LossKind or str
    cfg : SolverConfig
    validate : callable, optional
        ``validate(X) -> float`` recorded in the trace each iteration.
    init : LowRankFactors, optional
        Warm start (default: zero).

    Returns
    -------
    X : LowRankFactors
    trace : SolverTrace
    """
    if O.nnz == 0:
        raise ValueError("no observed entries")
    X, trace, _, _ = _accelerated(O, loss, cfg, validate=validate, init=init)
    return X, trace


def soft_impute(O, loss, cfg, validate=None, init=None):
    """Unaccelerated Soft-Impute at fixed ``lam`` (square loss only)."""
    if LossKind.parse(loss) is not LossKind.SQUARE:
        raise ValueError("soft_impute supports the square loss only")
    if O.nnz == 0:
        raise ValueError("no observed entries")
    X, trace, _, _ = _accelerated(O, loss, cfg, accelerate=False, continuation=False,
                                  validate=validate, init=init)
    return X, trace


def apg_exact(O, loss, cfg, validate=None, init=None):
    """The accelerated loop with an exact dense SVT in every step."""
    m, n = O.shape
    if m * n > cfg.dense_cap:
        raise DensificationRefused(
            "apg-exact densifies %dx%d = %d entries, above the cap of %d"
            % (m, n, m * n, cfg.dense_cap))
    if O.nnz == 0:
        raise ValueError("no observed entries")
    X, trace, _, _ = _accelerated(O, loss, replace(cfg, svd_mode="exact-dense"),
                                  validate=validate, init=init)
    return X, trace
