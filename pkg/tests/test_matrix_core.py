import numpy as np
import pytest

from kfstab.matrix_core import (Subspace, Tolerances, cmatrix, intersect, jordan_block, jordan_chains,
                                jordan_power, kron, matrix_power_norm, nullspace, spectral_radius, subspace_equal,
                                block_power)


def e(i, n=3):
    v = np.zeros((n, 1))
    v[i] = 1
    return v


def test_tolerances_validation():
    with pytest.raises(ValueError):
        Tolerances(tol_rank=0)
    with pytest.raises(ValueError):
        Tolerances(n_max_order=0)


def test_cmatrix_rejects_nonfinite_and_bad_shape():
    with pytest.raises(ValueError):
        cmatrix([[1, np.nan]])
    with pytest.raises(ValueError, match="expected 2 rows"):
        cmatrix([[1, 2]], rows=2)


@pytest.mark.parametrize("m, dim", [(np.eye(3), 0), (np.zeros((2, 3)), 3), ([[2, 1], [0, 1]], 0),
                                    ([[1, 1], [2, 2]], 1)])
def test_nullspace_dims(m, dim):
    assert nullspace(np.asarray(m, float)).dim == dim


def test_nullspace_tames_row_growth():
    # rows of wildly different magnitude still give the exact kernel
    m = np.array([[1.0, 1.0, 0], [1e30, -1e30, 0]])
    k = nullspace(m)
    assert k.dim == 1 and subspace_equal(k, Subspace.span(e(2)))


def test_intersect_examples():
    s1, s2 = Subspace.span(e(0)), Subspace.span(e(1))
    assert subspace_equal(intersect(s1, s1), s1)
    assert intersect(s1, s2).dim == 0
    rng = np.random.default_rng(0)
    s = Subspace.span(rng.standard_normal((3, 2)))
    assert subspace_equal(intersect(Subspace.full(3), s), s)
    with pytest.raises(ValueError):
        intersect(s1, Subspace.full(2))


def test_subspace_equal_examples():
    s = Subspace.span(e(0))
    near = e(0) + 1e-15 * e(1)
    assert subspace_equal(s, Subspace.span(near / np.linalg.norm(near)))
    assert not subspace_equal(s, Subspace.span(e(1)))


def test_subspace_rejects_non_orthonormal_basis():
    with pytest.raises(ValueError):
        Subspace(2, np.array([[1.0], [1.0]]))


@pytest.mark.parametrize("m, rho", [(np.diag([0.5, -2]), 2.0), (jordan_block(3, 2), 3.0),
                                    (np.array([[0.9, 0.1], [0.2, 0.8]]), 1.0)])
def test_spectral_radius_examples(m, rho):
    assert spectral_radius(m) == pytest.approx(rho, rel=1e-12)


def test_spectral_radius_large_sparse_path():
    rng = np.random.default_rng(1)
    m = rng.random((600, 600))
    m /= m.sum(axis=1, keepdims=True)
    assert spectral_radius(m) == pytest.approx(1.0, rel=1e-8)


def test_spectral_radius_non_square():
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_kron_examples():
    assert np.array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))
    sel = kron([[1, 0]], np.eye(2))
    assert np.array_equal(sel, np.hstack([np.eye(2), np.zeros((2, 2))]))
    rng = np.random.default_rng(2)
    a, b, c, d = rng.standard_normal((4, 2, 2))
    assert np.allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)


def test_jordan_chains_and_errors():
    a = np.zeros((4, 4), complex)
    a[:2, :2] = jordan_block(2, 2)
    a[2, 2], a[3, 3] = 1j, -1
    assert jordan_chains(a) == [(0, 2, 2), (2, 1, 1j), (3, 1, -1)]
    with pytest.raises(ValueError):
        jordan_chains([[1, 0], [1, 1]])
    with pytest.raises(ValueError):
        jordan_chains([[1, 1], [0, 2]])


@pytest.mark.parametrize("t", [-3, 0, 1, 5, 70])
def test_jordan_power_matches_direct(t):
    j = jordan_block(0.9, 3)
    direct = np.linalg.matrix_power(np.linalg.inv(j) if t < 0 else j, abs(t))
    assert np.allclose(jordan_power(0.9, 3, t), direct, rtol=1e-10, atol=1e-14)
    if t >= 0:
        assert np.allclose(block_power(j, t), direct, rtol=1e-10, atol=1e-14)


def test_matrix_power_norm_examples():
    norm, up, lo = matrix_power_norm(2, 1, 5)
    assert norm == pytest.approx(32) and up == pytest.approx(32) and lo == pytest.approx(32)
    norm, up, lo = matrix_power_norm(1, 2, 10)
    assert norm == pytest.approx(np.linalg.norm(np.linalg.matrix_power(jordan_block(1, 2), 10), 2))
    assert lo <= norm <= up
    norm, up, _ = matrix_power_norm(0.5, 3, 20)
    assert norm <= up
    with pytest.raises(ValueError):
        matrix_power_norm(0, 2, 3)
