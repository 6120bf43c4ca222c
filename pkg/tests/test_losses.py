import numpy as np
import pytest
from hypothesis import given, strategies as st

from aisimpute.linalg import LowRankFactors
from aisimpute.losses import LossKind, loss_derivative, loss_value, objective, sparse_gradient

from conftest import random_factors, random_sparse


def total_loss(kind, X, O):
    return float(np.sum(loss_value(kind, X[O.rows, O.cols], O.vals)))


def test_square_zero_at_target():
    assert loss_value("square", 2.5, 2.5) == 0.0


@pytest.mark.parametrize("o", [-1.0, 1.0])
def test_logistic_at_zero(o):
    assert np.isclose(loss_value("logistic", 0.0, o), np.log(2.0), rtol=0, atol=1e-15)


def test_logistic_large_margin_no_overflow():
    with np.errstate(over="raise"):
        v = loss_value("logistic", 50.0, 1.0)
        assert abs(v - np.exp(-50.0)) <= 1e-12
        assert np.isfinite(loss_value("logistic", -800.0, 1.0))
        assert np.isfinite(loss_derivative("logistic", -800.0, 1.0))


def test_parse_rejects_unknown():
    with pytest.raises(ValueError):
        LossKind.parse("hinge")


def test_square_gradient_vanishes_at_target(rng):
    O = random_sparse(rng, 9, 7)
    S = sparse_gradient("square", O.to_dense(), O)
    assert np.all(S.vals == 0)


def test_logistic_gradient_at_zero(rng):
    O = random_sparse(rng, 9, 7)
    O = O.with_values(np.sign(O.vals) + (O.vals == 0))
    S = sparse_gradient("logistic", LowRankFactors.zeros(9, 7), O)
    assert np.allclose(S.vals, -O.vals / 2)


@pytest.mark.parametrize("kind", ["square", "logistic"])
def test_gradient_finite_differences(kind, rng):
    m, n = 15, 12
    O = random_sparse(rng, m, n, 0.4)
    if kind == "logistic":
        O = O.with_values(np.where(O.vals >= 0, 1.0, -1.0))
    X = random_factors(rng, m, n, 3).to_dense()
    G = sparse_gradient(kind, X, O).to_dense()
    h = 1e-6
    for p in rng.choice(O.nnz, 20, replace=False):
        i, j = O.rows[p], O.cols[p]
        E = np.zeros((m, n))
        E[i, j] = h
        fd = (total_loss(kind, X + E, O) - total_loss(kind, X - E, O)) / (2 * h)
        assert abs(fd - G[i, j]) <= 1e-5 * max(abs(G[i, j]), 1e-3)


@given(st.sampled_from(["square", "logistic"]), st.floats(-20, 20), st.floats(-20, 20),
       st.sampled_from([-1.0, 1.0]))
def test_derivative_lipschitz(kind, x, y, o):
    rho = LossKind.parse(kind).modulus
    d = abs(loss_derivative(kind, x, o) - loss_derivative(kind, y, o))
    assert d <= rho * abs(x - y) + 1e-12


@given(st.sampled_from(["square", "logistic"]), st.floats(-20, 20), st.floats(-20, 20),
       st.floats(0, 1), st.sampled_from([-1.0, 1.0]))
def test_loss_convex(kind, x, y, a, o):
    mid = loss_value(kind, a * x + (1 - a) * y, o)
    assert mid <= a * loss_value(kind, x, o) + (1 - a) * loss_value(kind, y, o) + 1e-12


def test_objective_at_zero(rng):
    O = random_sparse(rng, 6, 5)
    F = objective("square", LowRankFactors.zeros(6, 5), O, 3.0)
    assert np.isclose(F, 0.5 * np.sum(O.vals**2))


def test_objective_zero_lambda_exact_fit(rng):
    O = random_sparse(rng, 6, 5)
    assert objective("square", O.to_dense(), O, 0.0) == 0.0


def test_objective_matches_dense(rng):
    O = random_sparse(rng, 10, 8, 0.5)
    X = random_factors(rng, 10, 8, 3)
    D = X.to_dense()
    mask = np.zeros((10, 8), bool)
    mask[O.rows, O.cols] = True
    dense = 0.5 * np.sum(((D - O.to_dense()) * mask) ** 2) + 0.4 * np.linalg.norm(D, "nuc")
    assert abs(objective("square", X, O, 0.4) - dense) <= 1e-10 * dense
