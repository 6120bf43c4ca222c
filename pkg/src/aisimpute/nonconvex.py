"""Nonconvex spectral regularizers solved by difference-of-convex iterations.

Each outer step linearizes the concave part of the regularizer at the
current iterate, which leaves a convex problem of the same "sparse plus
low-rank" shape that the accelerated solver handles.  Because the
linearization majorizes the true objective and the inner solve starts from
the current iterate and returns its best point, the outer objective never
increases.
"""

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .linalg import LowRankFactors
from .losses import LossKind, loss_value
from .solver import SolverTrace, TraceRecord, _accelerated

__all__ = ["RegularizerKind", "supergradient_weights", "regularizer_value", "dc_tnn",
           "dc_weighted", "OUTER_MAX_ITER"]

log = logging.getLogger(__name__)

OUTER_MAX_ITER = 20
INNER_TOL_FLOOR = 1e-8


@dataclass(frozen=True)
class RegularizerKind:
    """``name`` is one of ``nuclear``, ``tnn``, ``capped`` and ``lsp``.

    ``param`` is the truncation ``r`` for TNN (``sum_{i >= r} sigma_i`` is
    penalized) and ``theta`` for capped-l1 and LSP.
    """

    name: str
    param: float = None

    def __post_init__(self):
        if self.name not in ("nuclear", "tnn", "capped", "lsp"):
            raise ValueError("unknown regularizer %r" % self.name)
        if self.name == "tnn":
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise ValueError("tnn needs an integer r >= 1")
            object.__setattr__(self, "param", int(self.param))
        elif self.name in ("capped", "lsp"):
            if self.param is None or not self.param > 0:
                raise ValueError("%s needs theta > 0" % self.name)
            object.__setattr__(self, "param", float(self.param))

    @classmethod
    def parse(cls, text):
        """``nuclear``, ``tnn:R``, ``capped:T`` or ``lsp:T``."""
        if isinstance(text, cls):
            return text
        name, _, arg = str(text).partition(":")
        name = name.strip().lower()
        if name == "nuclear":
            if arg:
                raise ValueError("nuclear takes no parameter")
            return cls("nuclear")
        if not arg:
            raise ValueError("%s needs a parameter, e.g. %s:2" % (name, name))
        return cls(name, int(arg) if name == "tnn" else float(arg))


def supergradient_weights(sigma, reg):
    """Weights ``r'(sigma_i)`` of the concave penalty at each singular value.

    Capped-l1 uses 0 at the kink ``sigma == theta``.  The output is
    non-decreasing whenever ``sigma`` is non-increasing.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
        raise ValueError("sigma must be non-negative and non-increasing")
    if reg.name == "capped":
        return (sigma < reg.param).astype(float)
    if reg.name == "lsp":
        return 1.0 / (reg.param + sigma)
    if reg.name == "nuclear":
        return np.ones_like(sigma)
    raise ValueError("tnn has no weight form; use dc_tnn")


def regularizer_value(sigma, reg):
    """``sum_i r(sigma_i)`` over the given (non-zero) singular values."""
    sigma = np.asarray(sigma, dtype=float)
    if reg.name == "nuclear":
        return float(np.sum(sigma))
    if reg.name == "tnn":
        return float(np.sum(sigma[reg.param - 1:]))
    if reg.name == "capped":
        return float(np.sum(np.minimum(sigma, reg.param)))
    return float(np.sum(np.log1p(sigma / reg.param)))


def _objective(loss, X, O, lam, reg):
    x = X.at(O.rows, O.cols)
    return float(np.sum(loss_value(loss, x, O.vals)) + lam * regularizer_value(X.sigma, reg))


def _outer_loop(O, loss, reg, cfg, surrogate, validate):
    loss = LossKind.parse(loss)
    m, n = O.shape
    X = LowRankFactors.zeros(m, n)
    F = _objective(loss, X, O, cfg.lam, reg)
    trace = SolverTrace()
    start = time.perf_counter()
    for tau in range(OUTER_MAX_ITER):
        inner_cfg = replace(cfg, rel_tol=max(cfg.rel_tol * 0.5 ** tau, INNER_TOL_FLOOR))
        kwargs = surrogate(X, tau)
        # the first step starts from zero and is a plain convex solve, so it
        # may use continuation; later ones stay at lam from the warm start
        first = tau == 0
        _, _, X_best, _ = _accelerated(O, loss, inner_cfg, continuation=first,
                                       init=None if first else X, validate=None, **kwargs)
        F_new = _objective(loss, X_best, O, cfg.lam, reg)
        if not math.isfinite(F_new):
            raise ArithmeticError("outer iteration %d: objective became %r" % (tau + 1, F_new))
        if F_new > F:
            # the surrogate majorizes F, so this only happens at round-off level
            log.debug("outer step %d rose by %g; keeping the previous iterate", tau + 1, F_new - F)
            X_best, F_new = X, F
        valid = validate(X_best) if validate is not None else float("nan")
        trace.append(TraceRecord(tau + 1, time.perf_counter() - start, F_new, X_best.rank,
                                 cfg.lam, False, valid))
        rel = abs(F - F_new) / max(abs(F), np.finfo(float).tiny)
        X, F = X_best, F_new
        if tau > 0 and rel < cfg.rel_tol:
            break
    return X, trace


def dc_tnn(O, loss, r, cfg, validate=None):
    """Truncated nuclear norm ``lam * sum_{i >= r} sigma_i(X)``.

    The top ``r - 1`` singular pairs of the current iterate give ``A`` and
    ``B``; the inner problem adds ``-lam tr(A^T X B)`` to the nuclear-norm
    objective.  ``r = 1`` is the nuclear norm.  The returned trace has one
    record per outer iteration holding the truncated-norm objective.
    """
    reg = RegularizerKind("tnn", r)

    def surrogate(X, tau):
        k = min(reg.param - 1, X.rank)
        return {"tnn_pair": (X.U[:, :k], X.V[:, :k])}

    return _outer_loop(O, loss, reg, cfg, surrogate, validate)


def dc_weighted(O, loss, reg, cfg, validate=None):
    """Capped-l1 or LSP regularizer via reweighted nuclear norms.

    Weights are recomputed from the singular values of the current iterate
    (zeros beyond its rank) and held fixed during the inner solve.
    """
    reg = RegularizerKind.parse(reg)
    if reg.name not in ("capped", "lsp"):
        raise ValueError("dc_weighted handles capped and lsp; got %r" % reg.name)
    kmax = min(O.shape)

    def surrogate(X, tau):
        sigma = np.zeros(kmax)
        sigma[:X.rank] = X.sigma
        return {"weights": supergradient_weights(sigma, reg)}

    return _outer_loop(O, loss, reg, cfg, surrogate, validate)
