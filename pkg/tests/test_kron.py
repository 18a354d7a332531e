import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from gridmp import autodiff as ad
from gridmp.models.kron import SparseOperator, kron_operator, skp_layer, unvec, vec


def random_instance(rng, n=None, d=None, d_out=None, c=None):
    n = n or int(rng.integers(1, 9))
    d, d_out = d or int(rng.integers(1, 5)), d_out or int(rng.integers(1, 5))
    c = c or int(rng.integers(1, 4))
    ops = [rng.normal(size=(n, n)) for _ in range(c)]
    ws = [rng.normal(size=(d, d_out)) for _ in range(c)]
    return rng.normal(size=(n, d)), ops, ws


@pytest.mark.parametrize("seed", range(10))
def test_matrix_form_equals_vectorized(seed):
    x, ops, ws = random_instance(np.random.default_rng(seed))
    out = skp_layer(x, ops, ws).data
    assert_allclose(vec(out), kron_operator(ops, ws) @ vec(x), rtol=0, atol=1e-10)


def test_kron_entries_2x2():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[0.5, -1.0], [2.0, 0.25]])
    K = np.kron(A, B)
    for i, j, p, q in np.ndindex(2, 2, 2, 2):
        assert K[2 * i + p, 2 * j + q] == A[i, j] * B[p, q]


def test_identity_layer():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(skp_layer(x, [np.eye(4)], [np.eye(3)]).data, x)


def test_vec_round_trip():
    x = np.arange(6.0).reshape(2, 3)
    assert vec(x).tolist() == [0, 3, 1, 4, 2, 5]
    assert np.array_equal(unvec(vec(x), (2, 3)), x)


def test_sparse_and_stacked_operators_agree():
    rng = np.random.default_rng(1)
    n, b = 4, 2
    src, dst = rng.integers(0, n * b, 10), rng.integers(0, n * b, 10)
    sp = SparseOperator(src, dst, ad.Tensor(rng.normal(size=10)), n * b)
    x, w = rng.normal(size=(n * b, 3)), rng.normal(size=(3, 2))
    dense = sp.dense()
    assert_allclose(skp_layer(x, [sp], [w]).data, dense @ x @ w, atol=1e-12)
    stack = rng.normal(size=(b, n, n))
    block = np.zeros((n * b, n * b))
    for g in range(b):
        block[g * n:(g + 1) * n, g * n:(g + 1) * n] = stack[g]
    assert_allclose(skp_layer(x, [stack], [w]).data, block @ x @ w, atol=1e-12)


def test_shape_errors():
    x = np.ones((3, 2))
    with pytest.raises(ad.ShapeError):
        skp_layer(x, [np.eye(4)], [np.eye(2)])
    with pytest.raises(ad.ShapeError):
        skp_layer(x, [np.eye(3), np.eye(3)], [np.eye(2)])
    with pytest.raises(ad.ShapeError):
        skp_layer(x, [np.ones((2, 2, 2))], [np.eye(2)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_linearity_in_x(seed):
    rng = np.random.default_rng(seed)
    x, ops, ws = random_instance(rng)
    y = rng.normal(size=x.shape)
    a = skp_layer(x + 2 * y, ops, ws).data
    assert_allclose(a, skp_layer(x, ops, ws).data + 2 * skp_layer(y, ops, ws).data, atol=1e-10)
