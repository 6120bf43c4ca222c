"""Evaluation metrics on a held-out split."""

from dataclasses import dataclass

import numpy as np

from .linalg import LowRankFactors
from .tensor import LatentDecomposition

__all__ = ["Metrics", "predict", "evaluate", "nmse", "rmse", "sign_accuracy"]


@dataclass
class Metrics:
    """``nmse`` and ``rmse`` are set for regression, ``accuracy`` for sign
    prediction.  ``ranks`` is a 1-tuple for matrices, per-mode for tensors."""

    nmse: float = None
    rmse: float = None
    accuracy: float = None
    ranks: tuple = ()


def predict(X, S):
    """Values of the model ``X`` at the positions stored in ``S``."""
    if isinstance(X, LatentDecomposition):
        return X.at_pattern(S)
    if isinstance(X, LowRankFactors):
        return X.at(S.rows, S.cols)
    X = np.asarray(X)
    if hasattr(S, "indices"):
        return X[tuple(S.indices.T)]
    return X[S.rows, S.cols]


def nmse(pred, truth):
    """``||pred - truth|| / ||truth||`` over the given entries."""
    return float(np.linalg.norm(pred - truth) / np.linalg.norm(truth))


def rmse(pred, truth):
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def sign_accuracy(pred, labels):
    """Fraction of ``sign(pred) == labels``, with ``sign(0)`` taken as +1."""
    s = np.where(pred >= 0, 1.0, -1.0)
    return float(np.mean(s == labels))


def evaluate(X, dataset, task="regression"):
    """Score ``X`` on ``dataset.test``.

    Parameters
    ----------
    X : LowRankFactors, LatentDecomposition or ndarray
    dataset : Dataset
    task : {"regression", "sign"}

    Returns
    -------
    Metrics
    """
    test = dataset.test
    if test.nnz == 0:
        raise ValueError("empty test split")
    pred = predict(X, test)
    if isinstance(X, LatentDecomposition):
        ranks = X.ranks
    elif isinstance(X, LowRankFactors):
        ranks = (X.rank,)
    else:
        ranks = (int(np.linalg.matrix_rank(np.asarray(X))),)
    if task == "regression":
        return Metrics(nmse=nmse(pred, test.vals), rmse=rmse(pred, test.vals), ranks=ranks)
    if task == "sign":
        return Metrics(accuracy=sign_accuracy(pred, test.vals), ranks=ranks)
    raise ValueError("task must be 'regression' or 'sign'")
