"""Smooth elementwise losses and sparse gradient assembly."""

import enum

import numpy as np
from scipy.special import expit

from .linalg import LowRankFactors

__all__ = ["LossKind", "loss_value", "loss_derivative", "sparse_gradient", "objective"]


class LossKind(enum.Enum):
    SQUARE = "square"
    LOGISTIC = "logistic"

    @property
    def modulus(self):
        """Lipschitz constant of the derivative in ``x`` (labels in {-1, 1})."""
        return 1.0 if self is LossKind.SQUARE else 0.25

    @classmethod
    def parse(cls, kind):
        return kind if isinstance(kind, cls) else cls(str(kind).lower())


def loss_value(kind, x, o):
    """Elementwise loss; vectorized over ``x`` and ``o``."""
    kind = LossKind.parse(kind)
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    if kind is LossKind.SQUARE:
        return 0.5 * (x - o) ** 2
    # log(1 + exp(-x o)) without overflow
    return np.logaddexp(0.0, -x * o)


def loss_derivative(kind, x, o):
    kind = LossKind.parse(kind)
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    if kind is LossKind.SQUARE:
        return x - o
    return -o * expit(-x * o)


def evaluate_on_pattern(Y, O):
    """Entries of ``Y`` at the observed positions of ``O``.

    ``Y`` may be a :class:`LowRankFactors`, a sequence of ``(scale, factors)``
    pairs, a dense array or an object with an ``at(rows, cols)`` method.  For
    a sparse tensor ``O`` it is a dense array or a latent decomposition.
    """
    if hasattr(O, "indices"):
        if isinstance(Y, np.ndarray):
            return Y[tuple(O.indices.T)]
        return Y.at_pattern(O)
    if isinstance(Y, np.ndarray):
        return Y[O.rows, O.cols]
    if hasattr(Y, "at"):
        return Y.at(O.rows, O.cols)
    out = np.zeros(O.nnz)
    for scale, f in Y:
        if f.rank:
            out += scale * f.at(O.rows, O.cols)
    return out


def sparse_gradient(kind, Y, O):
    """Gradient of ``sum_Omega loss(Y_ij, O_ij)`` as a sparse matrix on Omega.

    With a sparse tensor ``O`` the result is a sparse tensor on the same
    pattern; it is the gradient with respect to every latent component.
    """
    y = evaluate_on_pattern(Y, O)
    return O.with_values(loss_derivative(kind, y, O.vals))


def nuclear(sigma):
    return float(np.sum(sigma))


def objective(kind, X, O, lam, reg_value=nuclear):
    """``sum_Omega loss(X_ij, O_ij) + lam * reg_value(sigma(X))``."""
    x = evaluate_on_pattern(X, O)
    sigma = X.sigma if isinstance(X, LowRankFactors) else np.linalg.svd(X, compute_uv=False)
    return float(np.sum(loss_value(kind, x, O.vals)) + lam * reg_value(sigma))
