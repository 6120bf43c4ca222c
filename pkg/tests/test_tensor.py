import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aisimpute.data import synth_tensor
from aisimpute.linalg import LowRankFactors
from aisimpute.losses import loss_value, sparse_gradient
from aisimpute.metrics import evaluate
from aisimpute.solver import SolverConfig, ais_impute
from aisimpute.splr import LowRankTerm, SparseCoo
from aisimpute.tensor import (LatentDecomposition, ModeUnfoldOperator, SparseTensorCoo,
                              default_lambda_scale, eval_at, matricize, mode_index_map,
                              tensor_ais_impute, tensorize)
from aisimpute.tuning import merge_observed

from conftest import random_factors


def random_tensor_coo(rng, dims, density=0.4):
    total = math.prod(dims)
    keys = np.sort(rng.choice(total, max(1, int(density * total)), replace=False))
    subs = np.stack(np.unravel_index(keys, dims), axis=1)
    return SparseTensorCoo(subs, rng.standard_normal(keys.size), dims)


def random_decomp(rng, dims, ranks):
    factors = []
    for d, k in enumerate(ranks):
        n = math.prod(dims) // dims[d]
        factors.append(random_factors(rng, dims[d], n, k) if k else
                       LowRankFactors.zeros(dims[d], n))
    return LatentDecomposition(tuple(dims), tuple(factors))


def brute_matricize(X, d):
    """Entry-by-entry mode-d unfolding, independent of the reshape trick."""
    dims = X.shape
    A = np.zeros((dims[d], X.size // dims[d]))
    for idx in itertools.product(*map(range, dims)):
        col, stride = 0, 1
        for l, i in enumerate(idx):
            if l != d:
                col += i * stride
                stride *= dims[l]
        A[idx[d], col] = X[idx]
    return A


def test_index_map_origin():
    for dims in [(2, 2, 2), (3, 4, 5), (2, 3)]:
        for d in range(1, len(dims) + 1):
            assert mode_index_map((1,) * len(dims), d, dims, one_based=True) == (1, 1)


def test_index_map_worked_example():
    assert mode_index_map((1, 2, 2), 1, (2, 2, 2), one_based=True) == (1, 4)


def test_index_map_rejects_out_of_range():
    with pytest.raises(ValueError):
        mode_index_map((2, 0), 0, (2, 2))
    with pytest.raises(ValueError):
        mode_index_map((0, 0), 2, (2, 2))


@pytest.mark.parametrize("dims", [(3, 4, 2), (2, 3), (4, 3, 2, 2)])
def test_matricize_matches_brute_force(dims, rng):
    X = rng.standard_normal(dims)
    for d in range(len(dims)):
        A = matricize(X, d)
        assert np.array_equal(A, brute_matricize(X, d))
        assert np.array_equal(tensorize(A, d, dims), X)


def test_index_map_agrees_with_matricize(rng):
    dims = (3, 4, 2)
    X = rng.standard_normal(dims)
    for d in range(3):
        A = matricize(X, d)
        for idx in itertools.product(*map(range, dims)):
            assert A[mode_index_map(idx, d, dims)] == X[idx]


def test_sparse_tensor_validation():
    with pytest.raises(ValueError):
        SparseTensorCoo([[0, 0, 0], [0, 0, 0]], [1.0, 2.0], (2, 2, 2))
    with pytest.raises(ValueError):
        SparseTensorCoo([[2, 0, 0]], [1.0], (2, 2, 2))
    with pytest.raises(ValueError):
        SparseTensorCoo([[0]], [1.0], (2,))
    with pytest.raises(OverflowError):
        SparseTensorCoo(np.zeros((0, 3)), [], (2**31, 2**31, 4))


def test_mode_matrix_is_unfolding(rng):
    O = random_tensor_coo(rng, (3, 4, 2))
    for d in range(3):
        assert np.array_equal(O.mode_matrix(d).to_dense(), matricize(O.to_dense(), d))


@pytest.mark.parametrize("with_terms", [False, True])
def test_unfold_apply_matches_dense(with_terms, rng):
    dims = (3, 4, 2)
    O = random_tensor_coo(rng, dims)
    for d in range(3):
        m, n = O.mode_shape(d)
        terms = [LowRankTerm(1.3, random_factors(rng, m, n, 2)),
                 LowRankTerm(-0.3, random_factors(rng, m, n, 1))] if with_terms else []
        op = ModeUnfoldOperator(O, d, terms)
        D = matricize(O.to_dense(), d) + sum(t.scale * t.factors.to_dense() for t in terms)
        v, u = rng.standard_normal(n), rng.standard_normal(m)
        assert np.allclose(op.unfold_apply(v), D @ v, rtol=0, atol=1e-12)
        assert np.allclose(op.unfold_apply_transpose(u), D.T @ u, rtol=0, atol=1e-12)


def test_unfold_apply_term_only(rng):
    dims = (3, 4, 2)
    O = SparseTensorCoo(np.zeros((0, 3)), [], dims)
    F = random_factors(rng, 4, 6, 2)
    v = rng.standard_normal(6)
    out = ModeUnfoldOperator(O, 1, [LowRankTerm(1.0, F)]).unfold_apply(v)
    assert np.allclose(out, F.U @ (F.sigma * (F.V.T @ v)), atol=1e-12)


def test_eval_at_zero():
    Z = LatentDecomposition.zeros((3, 4, 2))
    assert eval_at(Z, (1, 2, 1)) == 0.0


def test_eval_at_single_rank_one_mode(rng):
    dims = (3, 4, 2)
    X = random_decomp(rng, dims, (0, 1, 0))
    f = X.factors[1]
    idx = (2, 3, 1)
    row, col = mode_index_map(idx, 1, dims)
    assert np.isclose(eval_at(X, idx), f.U[row, 0] * f.sigma[0] * f.V[col, 0], rtol=0,
                      atol=1e-15)


def test_eval_at_and_pattern_match_dense(rng):
    dims = (3, 4, 2)
    X = random_decomp(rng, dims, (2, 1, 2))
    D = X.to_dense()
    for idx in itertools.product(*map(range, dims)):
        assert abs(eval_at(X, idx) - D[idx]) <= 1e-12
    O = random_tensor_coo(rng, dims)
    assert np.allclose(X.at_pattern(O), D[tuple(O.indices.T)], rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["square", "logistic"])
def test_tensor_gradient_finite_differences(kind, rng):
    dims = (5, 4, 3)
    O = random_tensor_coo(rng, dims, 0.5)
    if kind == "logistic":
        O = O.with_values(np.where(O.vals >= 0, 1.0, -1.0))
    X = random_decomp(rng, dims, (1, 2, 1))
    G = sparse_gradient(kind, X, O)
    D = X.to_dense()

    def f(T):
        return float(np.sum(loss_value(kind, T[tuple(O.indices.T)], O.vals)))

    h = 1e-6
    for p in rng.choice(O.nnz, 20, replace=False):
        E = np.zeros(dims)
        E[tuple(O.indices[p])] = h
        fd = (f(D + E) - f(D - E)) / (2 * h)
        assert abs(fd - G.vals[p]) <= 1e-5 * max(abs(G.vals[p]), 1e-3)


def stacked_gradient(O, dense_modes):
    # the smooth part sees only the sum of the latent tensors; every mode
    # receives the same sparse gradient
    g = sparse_gradient("square", sum(dense_modes), O).to_dense()
    return np.concatenate([g.ravel()] * len(dense_modes))


@given(st.integers(0, 2**32 - 1))
def test_stacked_gradient_lipschitz(seed):
    rng = np.random.default_rng(seed)
    dims = (3, 4, 2)
    O = random_tensor_coo(rng, dims, 0.5)
    X = [rng.standard_normal(dims) for _ in range(3)]
    Y = [rng.standard_normal(dims) for _ in range(3)]
    num = np.linalg.norm(stacked_gradient(O, X) - stacked_gradient(O, Y))
    den = np.linalg.norm(np.concatenate([(a - b).ravel() for a, b in zip(X, Y)]))
    assert num <= 3 * den + 1e-12


def test_stacked_gradient_lipschitz_attained(rng):
    # moving every mode by the same tensor supported on Omega reaches D * rho
    dims = (3, 4, 2)
    O = random_tensor_coo(rng, dims, 0.5)
    H = np.zeros(dims)
    H[tuple(O.indices.T)] = rng.standard_normal(O.nnz)
    X = [np.zeros(dims)] * 3
    Y = [H] * 3
    num = np.linalg.norm(stacked_gradient(O, X) - stacked_gradient(O, Y))
    den = np.linalg.norm(np.concatenate([H.ravel()] * 3))
    assert np.isclose(num / den, 3.0)


def test_two_mode_reduces_to_matrix(rng):
    m, n = 15, 12
    M = random_factors(rng, m, n, 2, scale=5.0).to_dense()
    mask = rng.random((m, n)) < 0.6
    r, c = np.nonzero(mask)
    vals = M[r, c] + 0.01 * rng.standard_normal(r.size)
    Ot = SparseTensorCoo(np.c_[r, c], vals, (m, n))
    Om = SparseCoo(r, c, vals, (m, n))
    lam = 0.1 * np.linalg.norm(Om.to_dense(), 2)
    big = 1e3 * np.linalg.norm(Om.to_dense(), 2)
    cfg = SolverConfig(lam=lam, rel_tol=1e-13, max_iter=3000)
    T, _ = tensor_ais_impute(Ot, "square", [lam, big], cfg)
    X, _ = ais_impute(Om, "square", cfg)
    assert T.ranks[1] == 0
    assert np.linalg.norm(T.factors[0].to_dense() - X.to_dense()) <= \
        1e-6 * np.linalg.norm(X.to_dense())


def test_tensor_solver_recovers_low_rank():
    ds = synth_tensor(80, seed=0)
    O = merge_observed(ds.train, ds.valid)
    lambdas = 3.0 * np.array(default_lambda_scale(ds.dims))
    X, trace = tensor_ais_impute(O, "square", lambdas, SolverConfig(lam=1.0, rel_tol=1e-6))
    assert X.ranks == (3, 3, 0)
    assert evaluate(X, ds).nmse < 0.05
    assert not trace.records[-1].restart


def test_default_lambda_scale():
    assert np.allclose(default_lambda_scale((125, 125, 3)), (1, 1, math.sqrt(125 / 3)))


def test_tensor_solver_input_checks(rng):
    O = random_tensor_coo(rng, (3, 4, 2))
    with pytest.raises(ValueError):
        tensor_ais_impute(O, "square", [1.0, 1.0], SolverConfig(lam=1.0))
    with pytest.raises(ValueError):
        tensor_ais_impute(O, "square", [1.0, -1.0, 1.0], SolverConfig(lam=1.0))
