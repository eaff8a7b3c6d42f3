"""Tests for the dense matrix kit."""
import math

import numpy as np
import pytest
import scipy.linalg

from helpers.rng import SeededRng
from numerics.errors import DefinitenessError, DimensionError, SingularityError, SymmetryError
from numerics.matkit import (
    estimate_spectral_norm, hilbert, inverse_fourth_root_step, newton_schulz_step, power_iteration_bound,
    procrustes_rotate, qr_upper_approx, qr_upper_factor, spectral_norm_bounds, sym_abs, sym_eig, sym_power,
)


def test_spectral_norm_bounds_identity():
    """Test bounds of the identity."""
    bounds = spectral_norm_bounds(np.eye(4))
    assert bounds.lower == pytest.approx(1.0)
    assert bounds.upper >= 1.0


def test_spectral_norm_bounds_ones():
    """Test bounds of the all-ones 2x2 matrix."""
    bounds = spectral_norm_bounds([[1.0, 1.0], [1.0, 1.0]])
    assert bounds.lower == pytest.approx(math.sqrt(2.0))
    assert bounds.upper >= 2.0 - 1e-12


def test_spectral_norm_bounds_rectangular(rng):
    """Test that the bounds bracket the true norm of a wide matrix."""
    A = rng.standard_normal((3, 7))
    sigma = np.linalg.norm(A, 2)
    bounds = spectral_norm_bounds(A)
    assert bounds.lower <= sigma + 1e-12
    assert bounds.upper >= sigma - 1e-12


def test_spectral_norm_bounds_diagonal():
    assert spectral_norm_bounds(np.diag([3.0, 1.0])).lower == pytest.approx(3.0)


def test_power_iteration_bound_hand_step():
    """Test one power step from the alpha-achieving column of diag(3, 1)."""
    assert power_iteration_bound(np.diag([3.0, 1.0])) == pytest.approx(3.0)


def test_estimate_spectral_norm_identity():
    assert estimate_spectral_norm(np.eye(6), rng=SeededRng(0)) == pytest.approx(1.0)


def test_estimate_spectral_norm_zero_matrix():
    assert estimate_spectral_norm(np.zeros((4, 4))) == 0.0


def test_estimate_spectral_norm_svd_oracle():
    """Test the estimate against a full SVD on random Gaussian matrices."""
    rng = SeededRng(7)
    for _ in range(20):
        A = rng.standard_normal((100, 100))
        sigma = np.linalg.norm(A, 2)
        estimate = estimate_spectral_norm(A, subspace_dim=32, iters=4, rng=rng)
        assert 0.9 * sigma <= estimate <= sigma * (1.0 + 1e-12)


def test_estimate_spectral_norm_rejects_bad_params():
    with pytest.raises(ValueError):
        estimate_spectral_norm(np.eye(2), subspace_dim=0)


def test_sym_eig_examples():
    """Test eigenvalues of small symmetric matrices."""
    w, V = sym_eig(np.diag([2.0, 5.0]))
    np.testing.assert_allclose(w, [2.0, 5.0])
    np.testing.assert_allclose(np.abs(V), np.eye(2), atol=1e-15)

    w, _ = sym_eig([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-15)

    w, _ = sym_eig(hilbert(3))
    assert w[0] == pytest.approx(2.687e-3, rel=1e-3)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(SymmetryError):
        sym_eig([[1.0, 2.0], [0.0, 1.0]])


def test_sym_eig_rejects_non_square():
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))


def test_sym_power_and_abs(spd_matrix):
    """Test matrix powers through the eigendecomposition."""
    half = sym_power(spd_matrix, 0.5)
    np.testing.assert_allclose(half @ half, spd_matrix, atol=1e-12)
    inv = sym_power(spd_matrix, -1.0)
    np.testing.assert_allclose(inv @ spd_matrix, np.eye(5), atol=1e-10)
    np.testing.assert_allclose(sym_abs(-spd_matrix), spd_matrix, atol=1e-12)


def test_sym_power_negative_power_needs_pd():
    with pytest.raises(DefinitenessError):
        sym_power(np.diag([1.0, -1.0]), -0.5)


def test_sym_power_floor():
    out = sym_power(np.diag([1e-20, 4.0]), -0.5, floor=1e-4)
    np.testing.assert_allclose(np.diag(out), [100.0, 0.5])


def test_qr_upper_factor_examples():
    """Test the triangular factor on hand-checked inputs."""
    A = np.array([[2.0, 1.0], [0.0, 3.0]])
    np.testing.assert_allclose(qr_upper_factor(A), A, atol=1e-15)
    np.testing.assert_allclose(qr_upper_factor([[0.0, -1.0], [1.0, 0.0]]), np.eye(2), atol=1e-15)

    delta = 1e-4
    R = qr_upper_factor(np.eye(2) + np.array([[0.0, delta], [delta, 0.0]]))
    np.testing.assert_allclose(R, [[1.0, 2 * delta], [0.0, 1.0]], atol=1e-7)


def test_qr_upper_factor_reconstructs(rng):
    A = rng.standard_normal((6, 6))
    R = qr_upper_factor(A)
    assert np.all(np.diag(R) > 0)
    # A^T A = R^T R for any orthogonal Omega
    np.testing.assert_allclose(R.T @ R, A.T @ A, atol=1e-10)


def test_qr_upper_factor_singular():
    with pytest.raises(SingularityError):
        qr_upper_factor([[1.0, 2.0], [2.0, 4.0]])


def test_qr_upper_approx_modes():
    """Test both first-order approximations."""
    np.testing.assert_allclose(qr_upper_approx(np.zeros((3, 3))), np.eye(3))
    delta = 1e-3
    D = np.array([[0.0, delta], [delta, 0.0]])
    np.testing.assert_allclose(qr_upper_approx(D), [[1.0, 2 * delta], [0.0, 1.0]])
    np.testing.assert_allclose(qr_upper_approx(D, large_step=True), [[1.0, delta], [0.0, 1.0]])
    d = np.diag([0.1, -0.2])
    for large in (False, True):
        np.testing.assert_allclose(qr_upper_approx(d, large_step=large), np.eye(2) + d)


def test_newton_schulz_scalar_recursion():
    """Test the scalar residual recursion R' = -0.5 (R + 3) R^2."""
    assert newton_schulz_step(np.eye(1), np.eye(1))[0, 0] == 1.0
    p = newton_schulz_step(np.array([[0.5]]), np.eye(1))[0, 0]
    assert p == pytest.approx(0.6875, abs=1e-15)
    r0, r1 = -0.5, p - 1.0
    assert r1 == pytest.approx(-0.5 * (r0 + 3.0) * r0 * r0, abs=1e-15)
    assert abs(r1) / r0 ** 2 == pytest.approx(1.25)
    assert abs(r1) / r0 ** 2 <= (math.sqrt(17.0) + 3.0) / 4.0


def test_newton_schulz_quadratic_ratio_commuting(rng):
    """Test the quadratic convergence ratio on diagonal setups."""
    bound = (math.sqrt(17.0) + 3.0) / 4.0
    for _ in range(10):
        lam = 0.1 + rng.uniform(5)
        H = np.diag(lam)
        P = (0.05 + 1.45 * rng.uniform()) / lam.max() * np.eye(5)
        r = np.linalg.norm(H @ P - np.eye(5), 2)
        for _ in range(60):
            P = newton_schulz_step(P, H @ H)
            r_next = np.linalg.norm(H @ P - np.eye(5), 2)
            assert r_next <= r + 1e-15
            if r > 1e-6:
                assert r_next / r ** 2 <= bound + 1e-9
            r = r_next
            if r < 1e-13:
                break


def test_newton_schulz_shape_mismatch():
    with pytest.raises(DimensionError):
        newton_schulz_step(np.eye(2), np.eye(3))


def test_inverse_fourth_root_step_scalars():
    """Test fixed points and one step of the inverse fourth root iteration."""
    q = inverse_fourth_root_step([[0.5]], [[0.25]], [[16.0]])
    assert q[0, 0] == pytest.approx(0.5)
    assert inverse_fourth_root_step(np.eye(1), np.eye(1), np.eye(1))[0, 0] == 1.0
    q = inverse_fourth_root_step([[0.5]], [[0.25]], [[1.0]])
    assert q[0, 0] == pytest.approx(0.6171875, abs=1e-15)


def test_procrustes_symmetric_unchanged(spd_matrix):
    np.testing.assert_array_equal(procrustes_rotate(spd_matrix), spd_matrix)


def test_procrustes_hand_example():
    """Test the order-2 step on a quarter-turn rotation."""
    Q = np.array([[0.0, -1.0], [1.0, 0.0]])
    out = procrustes_rotate(Q, order=2)
    np.testing.assert_allclose(out, [[0.25, -0.96875], [0.96875, 0.25]], atol=1e-15)
    assert np.trace(out) == pytest.approx(0.5)


@pytest.mark.parametrize("order", [2, 3, 4])
def test_procrustes_orthogonality_defect(order):
    """Test that every step stays within 1e-3 of orthogonal."""
    rng = SeededRng(order)
    for _ in range(20):
        Q = rng.standard_normal((6, 6)) + 2.0 * np.eye(6)
        omega = procrustes_rotate(Q, order=order) @ np.linalg.inv(Q)
        assert np.linalg.norm(omega.T @ omega - np.eye(6), 2) <= 1e-3


@pytest.mark.parametrize("order", [2, 3, 4])
def test_procrustes_increases_trace(order):
    rng = SeededRng(10 + order)
    Q = rng.standard_normal((5, 5)) + 2.0 * np.eye(5)
    assert np.trace(procrustes_rotate(Q, order=order)) >= np.trace(Q)


def test_procrustes_converges_to_polar_factor():
    """Test that iterated rotations reach the SPD polar factor."""
    rng = SeededRng(3)
    Q0 = 0.05 * rng.standard_normal((5, 5)) + 2.0 * np.eye(5)
    assert np.linalg.det(Q0) > 0
    Q = Q0
    for _ in range(500):
        Q = procrustes_rotate(Q, order=3)
    asym = np.linalg.norm(Q - Q.T) / np.linalg.norm(Q)
    assert asym <= 1e-6
    assert np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] > 0
    _, polar_p = scipy.linalg.polar(Q0, side='right')
    np.testing.assert_allclose(Q, polar_p, atol=1e-6)


def test_procrustes_rejects_order():
    with pytest.raises(ValueError):
        procrustes_rotate(np.eye(2), order=5)


def test_hilbert_entries():
    H = hilbert(3)
    assert H[0, 0] == 1.0
    assert H[2, 2] == pytest.approx(0.2)
    assert H[0, 2] == pytest.approx(1.0 / 3.0)
