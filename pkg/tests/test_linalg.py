import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulamstab.linalg import (FiniteMean, InvertibilityError, adjoint, herm_abs, matrix_mean, op_norm,
                             polar_unitary_factor, random_unitary, unitarity_defect)


def _cmat(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_op_norm_examples(rng):
    assert op_norm(np.eye(3)) == pytest.approx(1.0)
    assert op_norm(np.diag([0.5, 2.0])) == pytest.approx(2.0)
    A = _cmat(rng, 4, 4)
    oracle = np.sqrt(np.max(np.linalg.eigvalsh(adjoint(A) @ A)))
    assert abs(op_norm(A) - oracle) <= 1e-8


def test_unitarity_defect_examples(rng):
    assert unitarity_defect(random_unitary(5, rng)) <= 1e-12
    assert unitarity_defect(np.diag([1.0, 1.1])) == pytest.approx(0.21)
    W = polar_unitary_factor(_cmat(rng, 4, 4))
    assert unitarity_defect(W) <= 1e-10


def test_herm_abs_examples(rng):
    U = random_unitary(3, rng)
    assert np.allclose(herm_abs(U), np.eye(3), atol=1e-12)
    assert np.allclose(herm_abs(np.diag([-2.0, 3.0])), np.diag([2.0, 3.0]))
    A = _cmat(rng, 5, 5)
    P = herm_abs(A)
    assert np.max(np.abs(P @ P - adjoint(A) @ A)) <= 1e-9
    assert np.min(np.linalg.eigvalsh(P)) >= -1e-12


def test_herm_abs_rank_deficient_no_nan():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert np.isfinite(herm_abs(A)).all()


def test_polar_examples(rng):
    U = random_unitary(4, rng)
    assert np.allclose(polar_unitary_factor(U), U, atol=1e-12)
    assert np.allclose(polar_unitary_factor(np.diag([0.9, 1.1])), np.eye(2))
    A = _cmat(rng, 4, 4)
    W = polar_unitary_factor(A)
    assert np.max(np.abs(W - A @ np.linalg.inv(herm_abs(A)))) <= 1e-8
    assert np.allclose(W @ herm_abs(A), A, atol=1e-10)


def test_polar_margin():
    with pytest.raises(InvertibilityError):
        polar_unitary_factor(np.diag([1.0, 1e-9]), 1e-6)


def test_finite_mean_validation():
    with pytest.raises(ValueError):
        FiniteMean([0, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        FiniteMean([0, 1], [1.5, -0.5])
    m = FiniteMean.uniform(4)
    assert m.weights.sum() == pytest.approx(1.0)


def test_matrix_mean_examples(rng):
    C = _cmat(rng, 3, 3)
    assert np.allclose(matrix_mean([C, C, C], FiniteMean.uniform(3)), C)
    I = np.eye(2)
    assert np.allclose(matrix_mean([I, -I], FiniteMean.uniform(2)), 0)
    fam = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    M = matrix_mean(fam, FiniteMean.uniform(2))
    assert np.allclose(M, np.diag([0.5, 0.5]))
    assert op_norm(M) <= 0.5 * 1 + 0.5 * 1


def test_matrix_mean_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        matrix_mean([np.eye(2), np.eye(3)], FiniteMean.uniform(2))


families = st.tuples(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))


def _random_instance(n, d, seed):
    r = np.random.default_rng(seed)
    fam = _cmat(r, n, d, d)
    w = r.dirichlet(np.ones(n))
    return r, fam, FiniteMean(np.arange(n), w / w.sum())


@settings(max_examples=60, deadline=None)
@given(families)
def test_norm_bound_law(args):
    _, fam, mu = _random_instance(*args)
    assert op_norm(matrix_mean(fam, mu)) <= float(np.dot(mu.weights, op_norm(fam))) + 1e-10


@settings(max_examples=60, deadline=None)
@given(families)
def test_module_law(args):
    r, fam, mu = _random_instance(*args)
    d = fam.shape[1]
    A, B = _cmat(r, d, d), _cmat(r, d, d)
    lhs = matrix_mean(A[None] @ fam @ B[None], mu)
    assert np.max(np.abs(lhs - A @ matrix_mean(fam, mu) @ B)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(families)
def test_adjoint_law(args):
    _, fam, mu = _random_instance(*args)
    assert np.max(np.abs(matrix_mean(adjoint(fam), mu) - adjoint(matrix_mean(fam, mu)))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_polar_contract(d, seed):
    r = np.random.default_rng(seed)
    A = _cmat(r, d, d)
    if np.linalg.svd(A, compute_uv=False)[-1] < 1e-6:
        return
    W = polar_unitary_factor(A)
    assert unitarity_defect(W) <= 1e-10
    assert op_norm(W - A) <= op_norm(np.eye(d) - herm_abs(A)) + 1e-9
