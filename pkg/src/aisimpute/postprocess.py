"""Re-fit the singular values of a solver output on the observed entries.

The nuclear norm shrinks every retained singular value.  Keeping the
recovered subspaces fixed and minimizing the loss over the spectrum alone
undoes most of that bias at the cost of a k-dimensional smooth problem.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .linalg import LowRankFactors
from .losses import LossKind, loss_derivative, loss_value
from .tensor import LatentDecomposition

__all__ = ["SpectrumFit", "refit_matrix", "refit_tensor", "apply_matrix_fit", "apply_tensor_fit"]

log = logging.getLogger(__name__)

MEMORY = 10
MAX_ITER = 50
GRAD_TOL = 1e-8
# stand-in for a non-finite objective so the line search backtracks
_HUGE = 1e300


@dataclass
class SpectrumFit:
    """Result of a spectrum re-fit.

    ``theta`` is concatenated across modes for tensors, mode 1 first.
    """

    theta: np.ndarray
    converged: bool
    iterations: int
    final_value: float


def _design(U, V, rows, cols):
    # column i holds u_i[row] * v_i[col] for every observed entry
    return U[rows] * V[cols]


def _fit(A, o, loss, theta0):
    loss = LossKind.parse(loss)
    theta0 = np.asarray(theta0, dtype=float)

    def fun(theta):
        x = A @ theta
        f = float(np.sum(loss_value(loss, x, o)))
        g = A.T @ loss_derivative(loss, x, o)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            return _HUGE, np.zeros_like(theta)
        return f, g

    f0, g0 = fun(theta0)
    if np.linalg.norm(g0) <= GRAD_TOL:
        return SpectrumFit(theta0.copy(), True, 0, f0)
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   options={"maxcor": MEMORY, "maxiter": MAX_ITER, "gtol": GRAD_TOL,
                            "ftol": 0.0, "maxls": 40})
    theta, f = res.x, float(res.fun)
    grad_norm = float(np.linalg.norm(fun(theta)[1]))
    if not f <= f0:
        # never hand back something worse than the starting spectrum
        log.warning("spectrum re-fit did not descend (%s); keeping the input", res.message)
        return SpectrumFit(theta0.copy(), False, int(res.nit), f0)
    return SpectrumFit(theta, grad_norm <= GRAD_TOL, int(res.nit), f)


def refit_matrix(U, V, O, loss, theta0=None):
    """Minimize ``sum_Omega loss((U diag(theta) V^T)_ij, O_ij)`` over ``theta``.

    Parameters
    ----------
    U, V : ndarray
        Factor matrices with the same number ``k >= 1`` of columns; not
        modified.
    O : SparseCoo
        Observed entries.
    loss : LossKind or str
    theta0 : array_like, optional
        Starting spectrum, normally the shrunk singular values from the
        solver.  Defaults to zeros.

    Returns
    -------
    SpectrumFit
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise ValueError("U and V must have the same number of columns")
    k = U.shape[1]
    if k < 1:
        raise ValueError("nothing to re-fit: k = 0")
    theta0 = np.zeros(k) if theta0 is None else np.asarray(theta0, dtype=float)
    return _fit(_design(U, V, O.rows, O.cols), O.vals, loss, theta0)


def refit_tensor(decomp, O, loss):
    """Joint spectrum re-fit over every active mode of a latent decomposition."""
    blocks, theta0 = [], []
    for d, f in enumerate(decomp.factors):
        if f.rank:
            _, _, rows, cols = O._pattern(d)
            blocks.append(_design(f.U, f.V, rows, cols))
            theta0.append(f.sigma)
    if not blocks:
        raise ValueError("nothing to re-fit: every mode has rank 0")
    return _fit(np.hstack(blocks), O.vals, loss, np.concatenate(theta0))


def _with_spectrum(f, theta):
    # fold negative values into V and restore the non-increasing order
    U, V = f.U, f.V * np.where(theta < 0, -1.0, 1.0)
    s = np.abs(theta)
    keep = s > 0
    order = np.argsort(-s[keep], kind="stable")
    return LowRankFactors(U[:, keep][:, order], s[keep][order], V[:, keep][:, order])


def apply_matrix_fit(X, fit):
    """``X`` with its singular values replaced by ``fit.theta``."""
    return _with_spectrum(X, np.asarray(fit.theta))


def apply_tensor_fit(decomp, fit):
    pos, factors = 0, []
    for f in decomp.factors:
        k = f.rank
        factors.append(_with_spectrum(f, np.asarray(fit.theta[pos:pos + k])) if k else f)
        pos += k
    return LatentDecomposition(decomp.dims, tuple(factors))
