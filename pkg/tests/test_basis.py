import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorfem.basis import (
    Basis1D,
    NodeKind,
    OpCounter,
    default_quadrature,
    dense_tensor_matrix,
    eval_matrices,
    gauss_legendre,
    gauss_lobatto,
    tensor_grad_2d,
    tensor_grad_2d_t,
    tensor_interp_2d,
    tensor_interp_2d_t,
)


def test_gauss_legendre_small_rules():
    r1 = gauss_legendre(1)
    assert np.allclose(r1.points, [0.5]) and np.allclose(r1.weights, [1.0])
    r2 = gauss_legendre(2)
    h = 1 / (2 * np.sqrt(3))
    assert np.allclose(r2.points, [0.5 - h, 0.5 + h], atol=1e-15)
    assert np.allclose(r2.weights, [0.5, 0.5], atol=1e-15)


def test_gauss_lobatto_small_rules():
    r2 = gauss_lobatto(2)
    assert np.array_equal(r2.points, [0.0, 1.0]) and np.allclose(r2.weights, [0.5, 0.5])
    r3 = gauss_lobatto(3)
    assert np.allclose(r3.points, [0, 0.5, 1], atol=1e-15)
    assert np.allclose(r3.weights, [1 / 6, 2 / 3, 1 / 6], atol=1e-15)


@pytest.mark.parametrize("bad", [0, -1])
def test_gauss_legendre_rejects_empty(bad):
    with pytest.raises(ValueError):
        gauss_legendre(bad)


@pytest.mark.parametrize("bad", [0, 1])
def test_gauss_lobatto_needs_two_points(bad):
    with pytest.raises(ValueError):
        gauss_lobatto(bad)


@pytest.mark.parametrize("n", range(1, 13))
def test_legendre_exactness(n):
    r = gauss_legendre(n)
    assert np.all(np.diff(r.points) > 0) and np.all(r.weights > 0)
    assert 0 < r.points[0] and r.points[-1] < 1
    assert abs(r.weights.sum() - 1) < 1e-14
    for k in range(2 * n):
        assert abs(r.weights @ r.points**k - 1 / (k + 1)) < 1e-13


@pytest.mark.parametrize("n", range(2, 13))
def test_lobatto_exactness(n):
    r = gauss_lobatto(n)
    assert r.points[0] == 0.0 and r.points[-1] == 1.0
    assert np.all(np.diff(r.points) > 0) and np.all(r.weights > 0)
    assert abs(r.weights.sum() - 1) < 1e-14
    for k in range(2 * n - 2):
        assert abs(r.weights @ r.points**k - 1 / (k + 1)) < 1e-13


def test_default_quadrature_uses_p_plus_two_points():
    for p in range(1, 6):
        assert len(default_quadrature(p)) == p + 2


@pytest.mark.parametrize("kind", list(NodeKind))
@pytest.mark.parametrize("p", [1, 2, 3, 5, 8, 16])
def test_lagrange_property(kind, p):
    b = Basis1D(p, kind)
    assert np.all(np.diff(b.nodes) > 0)
    assert np.allclose(b.eval(b.nodes), np.eye(p + 1), atol=1e-13)


def test_linear_basis_rows():
    m = eval_matrices(Basis1D(1), np.array([0.5, 0.2]))
    assert np.allclose(m.B1d[0], [0.5, 0.5])
    assert np.allclose(m.G1d, [[-1, 1], [-1, 1]])


@pytest.mark.parametrize("p", [1, 2, 4, 7])
def test_partition_of_unity(p):
    m = eval_matrices(Basis1D(p), gauss_legendre(p + 3))
    assert np.allclose(m.B1d.sum(axis=1), 1, atol=1e-13)
    assert np.allclose(m.G1d.sum(axis=1), 0, atol=1e-12)


def test_derivative_matches_finite_differences():
    b = Basis1D(3)
    x = gauss_legendre(5).points
    h = 1e-6
    fd = (b.eval(x + h) - b.eval(x - h)) / (2 * h)
    G = eval_matrices(b, gauss_legendre(5)).G1d
    assert np.abs(G - fd).max() <= 1e-6 * max(1.0, np.abs(G).max())


def test_order_zero_basis_is_constant():
    b = Basis1D(0, NodeKind.GAUSS_LEGENDRE)
    assert np.allclose(b.eval([0.1, 0.7]), 1.0)
    assert np.allclose(b.deriv([0.3]), 0.0)


def _mats(p, nq):
    return eval_matrices(Basis1D(p), gauss_legendre(nq))


@settings(max_examples=40, deadline=None)
@given(p=st.integers(1, 6), nq=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_sum_factorization_matches_dense(p, nq, seed):
    m = _mats(p, nq)
    V = np.random.default_rng(seed).standard_normal((p + 1, p + 1))
    Bd = dense_tensor_matrix(m.B1d, m.B1d)
    scale = max(1.0, np.abs(V).max())
    assert np.allclose(tensor_interp_2d(m.B1d, V).ravel(), Bd @ V.ravel(), atol=1e-13 * scale * (p + 1) ** 2)
    gx, gy = tensor_grad_2d(m.B1d, m.G1d, V)
    Gx = dense_tensor_matrix(m.B1d, m.G1d)
    Gy = dense_tensor_matrix(m.G1d, m.B1d)
    tol = 1e-12 * scale * np.abs(Gx).max() * (p + 1) ** 2
    assert np.allclose(gx.ravel(), Gx @ V.ravel(), atol=tol)
    assert np.allclose(gy.ravel(), Gy @ V.ravel(), atol=tol)


@settings(max_examples=25, deadline=None)
@given(p=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_transposes_are_adjoint(p, seed):
    m = _mats(p, p + 2)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((p + 1, p + 1))
    Q, Qx, Qy = rng.standard_normal((3, p + 2, p + 2))
    lhs = np.sum(tensor_interp_2d(m.B1d, V) * Q)
    assert np.isclose(lhs, np.sum(V * tensor_interp_2d_t(m.B1d, Q)), rtol=1e-12, atol=1e-12)
    gx, gy = tensor_grad_2d(m.B1d, m.G1d, V)
    lhs = np.sum(gx * Qx + gy * Qy)
    rhs = np.sum(V * tensor_grad_2d_t(m.B1d, m.G1d, Qx, Qy))
    assert np.isclose(lhs, rhs, rtol=1e-11, atol=1e-11)


def test_interp_of_ones_and_unit_entry():
    m = _mats(3, 5)
    assert np.allclose(tensor_interp_2d(m.B1d, np.ones((4, 4))), 1.0, atol=1e-13)
    E = np.zeros((4, 4))
    E[0, 0] = 1.0
    assert np.allclose(tensor_interp_2d(m.B1d, E), np.outer(m.B1d[:, 0], m.B1d[:, 0]), atol=1e-15)


def test_gradient_of_linear_and_constant():
    b = Basis1D(3)
    m = _mats(3, 5)
    V = np.tile(b.nodes, (4, 1))  # f(x, y) = x, rows are y
    gx, gy = tensor_grad_2d(m.B1d, m.G1d, V)
    assert np.allclose(gx, 1.0, atol=1e-12) and np.allclose(gy, 0.0, atol=1e-12)
    gx, gy = tensor_grad_2d(m.B1d, m.G1d, np.full((4, 4), 2.5))
    assert np.allclose(gx, 0.0, atol=1e-12) and np.allclose(gy, 0.0, atol=1e-12)


def test_shape_mismatch_rejected():
    m = _mats(2, 4)
    with pytest.raises(ValueError):
        tensor_interp_2d(m.B1d, np.ones((4, 4)))
    with pytest.raises(ValueError):
        tensor_grad_2d(m.B1d, m.G1d, np.ones((3, 2)))


def test_batched_contraction_matches_loop():
    m = _mats(2, 4)
    V = np.random.default_rng(3).standard_normal((5, 3, 3))
    out = tensor_interp_2d(m.B1d, V)
    for e in range(5):
        assert np.allclose(out[e], tensor_interp_2d(m.B1d, V[e]))


def test_interp_multiply_count_is_cubic():
    counts = []
    for p in range(2, 9):
        c = OpCounter()
        tensor_interp_2d(_mats(p, p + 2).B1d, np.ones((p + 1, p + 1)), c)
        n, nq = p + 1, p + 2
        assert c.multiplies == n * nq * n + nq * nq * n
        counts.append(c.multiplies)
    slope = np.polyfit(np.log(np.arange(3, 10)), np.log(counts), 1)[0]
    assert slope < 3.3
