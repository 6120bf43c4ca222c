"""Regularization-path model selection on a train/validation split.

Two ways to produce the final model are supported:

A decreasing lambda path is fitted on the training split and scored on the
validation split.  The model rank is chosen with the one-standard-error
rule: the sparsest model whose mean validation loss is within one standard
error of the best one.  The final model is the least regularized model on
the path that does not exceed this rank, fitted either on

``fit_on="train"``
    the training split alone, or

``fit_on="all"``
    train and validation merged.  Lambda itself does not transfer between
    sample sizes (the loss term grows with the number of entries while the
    noise level grows roughly with its square root), but the selected model
    complexity does.

Validation losses are computed after the spectrum re-fit when ``post`` is
set, so the rank is chosen for the model that is actually reported.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossKind, loss_derivative
from .metrics import predict, rmse, sign_accuracy
from .nonconvex import RegularizerKind, dc_tnn, dc_weighted
from .postprocess import apply_matrix_fit, apply_tensor_fit, refit_matrix, refit_tensor
from .solver import SolverConfig, ais_impute, apg_exact, estimate_lambda_max, soft_impute
from .splr import SparseCoo
from .tensor import SparseTensorCoo, default_lambda_scale, tensor_ais_impute

__all__ = ["PathPoint", "Selection", "merge_observed", "validation_losses", "validation_error",
           "one_se_ranks", "post_process", "fit_matrix", "tune_regularizer", "select_matrix",
           "select_tensor"]

log = logging.getLogger(__name__)

# stop a path once validation error exceeds this multiple of the best so far,
# or after this many points without a new best
PATH_STOP_FACTOR = 1.5
PATH_PATIENCE = 8
MIN_LAMBDA_FRACTION = 1e-3
# LSP theta candidates as multiples of the selected lambda
LSP_THETA_FACTORS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class PathPoint:
    """``valid_error`` is the mean validation loss, ``valid_se`` its
    standard error."""

    lam: float
    ranks: tuple
    valid_error: float
    valid_se: float = float("nan")


@dataclass
class Selection:
    """Outcome of a model selection run.

    ``model`` is the solver output at ``lam`` and ``post`` its re-fitted
    version (``None`` when re-fitting is off).  ``path`` lists the
    training-split path used for validation.
    """

    lam: float
    model: object
    post: object
    ranks: tuple
    fit_on: str
    path: list = field(default_factory=list)


def merge_observed(a, b):
    """Union of two observation sets with disjoint positions."""
    if isinstance(a, SparseCoo):
        return SparseCoo.from_entries(np.r_[a.rows, b.rows], np.r_[a.cols, b.cols],
                                      np.r_[a.vals, b.vals], a.shape)
    return SparseTensorCoo.from_entries(np.vstack([a.indices, b.indices]),
                                        np.r_[a.vals, b.vals], a.dims)


def validation_losses(X, valid, loss):
    """Per-entry squared error (square loss) or 0/1 sign error (logistic)."""
    pred = predict(X, valid)
    if LossKind.parse(loss) is LossKind.SQUARE:
        return (pred - valid.vals) ** 2
    return (np.where(pred >= 0, 1.0, -1.0) != valid.vals).astype(float)


def validation_error(X, valid, loss):
    """RMSE for the square loss, sign error rate for the logistic loss."""
    pred = predict(X, valid)
    if LossKind.parse(loss) is LossKind.SQUARE:
        return rmse(pred, valid.vals)
    return 1.0 - sign_accuracy(pred, valid.vals)


def _ranks(X):
    return X.ranks if hasattr(X, "ranks") else (X.rank,)


def post_process(X, O, loss):
    """Spectrum re-fit of a matrix or tensor model; zero models pass through."""
    if hasattr(X, "ranks"):
        return apply_tensor_fit(X, refit_tensor(X, O, loss)) if sum(X.ranks) else X
    return apply_matrix_fit(X, refit_matrix(X.U, X.V, O, loss, X.sigma)) if X.rank else X


def fit_matrix(O, loss, lam, solver="ais", reg=None, cfg=None, init=None):
    """One fit at fixed ``lam`` with the chosen solver and regularizer."""
    cfg = replace(cfg or SolverConfig(lam=lam), lam=lam)
    reg = RegularizerKind.parse(reg or "nuclear")
    if reg.name == "tnn":
        return dc_tnn(O, loss, reg.param, cfg)[0]
    if reg.name in ("capped", "lsp"):
        return dc_weighted(O, loss, reg, cfg)[0]
    run = {"ais": ais_impute, "soft-impute": soft_impute, "apg-exact": apg_exact}[solver]
    return run(O, loss, cfg, init=init)[0]


def _lambda_start(O, loss):
    x0 = np.zeros(O.nnz)
    G = O.with_values(loss_derivative(loss, x0, O.vals))
    return estimate_lambda_max(G)


def _walk(fit, lam0, ratio, score=None, max_ranks=None):
    """Decreasing geometric path starting at ``lam0``.

    With ``score`` the walk stops once the score has clearly passed its
    minimum or stalls; with ``max_ranks`` it stops at the first model whose ranks
    exceed the bound (element-wise).
    """
    points, models = [], []
    lam, prev, best, since_best = lam0, None, math.inf, 0
    while lam >= lam0 * MIN_LAMBDA_FRACTION:
        X = fit(lam, prev)
        ranks = _ranks(X)
        if max_ranks is not None and any(r > b for r, b in zip(ranks, max_ranks)):
            break
        err, se = score(X) if score is not None else (float("nan"), float("nan"))
        points.append(PathPoint(lam, ranks, err, se))
        models.append(X)
        prev = X
        if score is not None:
            since_best = 0 if err < best else since_best + 1
            best = min(best, err)
            if err > PATH_STOP_FACTOR * best or since_best >= PATH_PATIENCE:
                break
        lam *= ratio
    return points, models


def one_se_ranks(path):
    """Ranks of the sparsest path point within one standard error of the best."""
    errs = np.array([p.valid_error for p in path])
    best = int(np.argmin(errs))
    bound = errs[best] + path[best].valid_se
    ok = [p for p in path if p.valid_error <= bound]
    return min(ok, key=lambda p: (sum(p.ranks), -p.lam)).ranks


def _least_regularized(points, models, max_ranks):
    keep = [i for i, p in enumerate(points)
            if all(r <= b for r, b in zip(p.ranks, max_ranks))]
    i = min(keep, key=lambda i: points[i].lam)
    return points[i].lam, models[i]


def _select(train, valid, loss, fit, lam0_train, lam0_all, fit_on, post, ratio):
    def score(X):
        e = validation_losses(post_process(X, train, loss) if post else X, valid, loss)
        return float(np.mean(e)), float(np.std(e) / math.sqrt(e.size))

    if fit_on not in ("train", "all"):
        raise ValueError("fit_on must be 'train' or 'all'")
    path, models = _walk(lambda lam, prev: fit(train, lam, prev), lam0_train, ratio, score)
    if not path:
        raise ArithmeticError("regularization path is empty")
    ranks = one_se_ranks(path)
    if fit_on == "train":
        lam, X = _least_regularized(path, models, ranks)
        O = train
    else:
        O = merge_observed(train, valid)
        pts, mods = _walk(lambda lam, prev: fit(O, lam, prev), lam0_all(O), ratio,
                          max_ranks=ranks)
        if not pts:
            raise ArithmeticError("no model on the merged path within the selected rank")
        lam, X = _least_regularized(pts, mods, ranks)
    log.info("selected lambda %.6g, ranks %s (fit on %s)", lam, _ranks(X), fit_on)
    return lam, X, O, path


def tune_regularizer(ds, loss, name, lam, rank, cfg=None):
    """Pick the TNN ``r`` or the LSP ``theta`` by validation error.

    Each candidate is fitted on the training split at the nuclear-norm
    ``lam`` (``lam * theta`` for LSP) and scored on the validation split;
    the first candidate with the lowest error wins.  TNN tries
    ``r = 1 .. rank + 2`` and LSP tries ``theta`` in
    ``LSP_THETA_FACTORS`` times ``lam``.
    """
    loss = LossKind.parse(loss)
    if name == "tnn":
        candidates = [RegularizerKind("tnn", r) for r in range(1, rank + 3)]
    elif name == "lsp":
        candidates = [RegularizerKind("lsp", f * lam) for f in LSP_THETA_FACTORS]
    else:
        raise ValueError("only tnn and lsp parameters are tuned, got %r" % (name,))
    best, best_err = None, math.inf
    for reg in candidates:
        step = lam * reg.param if reg.name == "lsp" else lam
        X = fit_matrix(ds.train, loss, step, reg=reg, cfg=cfg)
        err = validation_error(X, ds.valid, loss)
        log.info("%s parameter %.6g: validation error %.6g", name, reg.param, err)
        if err < best_err:
            best, best_err = reg, err
    return best


def select_matrix(ds, loss="square", fit_on="all", post=True, ratio=0.8, cfg=None,
                  solver="ais", reg=None):
    """Choose lambda for matrix completion and return the final model.

    The path is always computed with the nuclear norm and AIS-Impute; the
    requested ``solver`` and ``reg`` are then run at the selected lambda on
    the final observation set.  ``reg="tnn"`` or ``reg="lsp"`` without a
    parameter has it chosen by :func:`tune_regularizer`.  LSP runs at
    ``lam * theta`` so that its slope at zero matches the nuclear norm.
    """
    loss = LossKind.parse(loss)
    base = cfg or SolverConfig(lam=1.0)

    def fit(O, lam, prev):
        return ais_impute(O, loss, replace(base, lam=lam), init=prev)[0]

    def lam0(O):
        return _lambda_start(O, loss)

    lam, X, O, path = _select(ds.train, ds.valid, loss, fit, lam0(ds.train), lam0, fit_on,
                              post, ratio)
    if reg in ("tnn", "lsp"):
        reg = tune_regularizer(ds, loss, reg, lam, X.rank, base)
    reg = RegularizerKind.parse(reg or "nuclear")
    if reg.name == "lsp":
        lam = lam * reg.param
    if solver != "ais" or reg.name != "nuclear":
        X = fit_matrix(O, loss, lam, solver, reg, base)
    P = post_process(X, O, loss) if post else None
    return Selection(lam, X, P, _ranks(X), fit_on, path)


def select_tensor(ds, loss="square", fit_on="all", post=True, ratio=0.8, cfg=None,
                  scale=None):
    """Choose the common lambda multiplying the per-mode ``scale`` vector."""
    loss = LossKind.parse(loss)
    base = cfg or SolverConfig(lam=1.0)
    scale = np.asarray(scale if scale is not None else default_lambda_scale(ds.dims), float)

    def fit(O, lam, prev):
        return tensor_ais_impute(O, loss, lam * scale, base, init=prev)[0]

    def lam0(O):
        # smallest multiplier that keeps every mode at zero
        G = loss_derivative(loss, np.zeros(O.nnz), O.vals)
        return max(estimate_lambda_max(O.mode_matrix(d, G), iters=10, seed=base.seed) / scale[d]
                   for d in range(len(scale)))

    lam, X, O, path = _select(ds.train, ds.valid, loss, fit, lam0(ds.train), lam0, fit_on,
                              post, ratio)
    P = post_process(X, O, loss) if post else None
    return Selection(lam, X, P, _ranks(X), fit_on, path)
