"""Tests for the diagonal, Kronecker and low-rank preconditioner forms."""
import numpy as np
import pytest
import scipy.linalg

from helpers.rng import SeededRng
from fitters.base import DirectSum
from fitters.registry import build_direct_sum, build_preconditioner
from fitters.sparse_fit import DiagonalQ, KronQ, LraQ, kron_balance, lra_balance, precond_grad, uvec, vec
from numerics.crit import HvpPair
from numerics.errors import DimensionError, GroupExitError, ScenarioError
from numerics.matkit import sym_power


def _spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T / n + 0.5 * np.eye(n)


def test_uvec_is_column_major():
    X = uvec(np.arange(6.0), (2, 3))
    np.testing.assert_array_equal(X, [[0.0, 2.0, 4.0], [1.0, 3.0, 5.0]])
    np.testing.assert_array_equal(vec(X), np.arange(6.0))
    with pytest.raises(DimensionError):
        uvec(np.arange(5.0), (2, 3))


def test_diag_step_scalar():
    state = DiagonalQ([1.0], mu=1.0, beta=0.0)
    state.update(HvpPair([1.0], [4.0]))
    assert state.q[0] == pytest.approx(2.0 / 17.0, abs=1e-15)


def test_diag_fixed_point(rng):
    """Test that q^2 = 1/H leaves a diagonal Hessian fitted."""
    H = np.array([0.5, 2.0, 8.0])
    state = DiagonalQ(H ** -0.5)
    for _ in range(5):
        v = rng.standard_normal(3)
        state.update(HvpPair(v, H * v))
    np.testing.assert_allclose(state.q, H ** -0.5, atol=1e-14)
    np.testing.assert_allclose(state.precond_grad(np.ones(3)), 1.0 / H)


def test_diag_never_reaches_zero():
    state = DiagonalQ([0.0, 1.0])
    assert np.all(state.q != 0.0)


def test_lra_rank_zero_matches_diag():
    state = LraQ([1.0], np.zeros((1, 0)), np.zeros((1, 0)), mu=1.0, beta=0.0)
    state.update(HvpPair([1.0], [4.0]))
    assert state.d[0] == pytest.approx(2.0 / 17.0, abs=1e-15)


def test_lra_rank_zero_matches_diag_in_several_dimensions(rng):
    lra = LraQ(np.ones(2), np.zeros((2, 0)), np.zeros((2, 0)), mu=1.0, beta=0.0)
    diag = DiagonalQ(np.ones(2), mu=1.0, beta=0.0)
    first = HvpPair([3.0, 0.1], [0.1, 3.0])
    lra.update(first)
    diag.update(first)
    np.testing.assert_allclose(lra.d, [1.0 + 8.99 / 9.01, 0.02 / 9.01], rtol=1e-12)
    np.testing.assert_allclose(lra.d, diag.q, rtol=1e-12)

    lra = LraQ(np.ones(5), np.zeros((5, 0)), np.zeros((5, 0)), mu=0.3, beta=0.5)
    diag = DiagonalQ(np.ones(5), mu=0.3, beta=0.5)
    H = _spd(rng, 5)
    for _ in range(20):
        v = rng.standard_normal(5)
        pair = HvpPair(v, H @ v)
        lra.update(pair)
        diag.update(pair)
    np.testing.assert_allclose(lra.d, diag.q, rtol=1e-10)


def test_lra_apply_inverses(rng):
    n, r = 8, 3
    state = LraQ(1.0 + rng.uniform(n), 0.3 * rng.standard_normal((n, r)), 0.3 * rng.standard_normal((n, r)))
    x = rng.standard_normal(n)
    Q = state.dense_q()
    np.testing.assert_allclose(state.apply_q(x), Q @ x, atol=1e-12)
    np.testing.assert_allclose(state.apply_qt(x), Q.T @ x, atol=1e-12)
    np.testing.assert_allclose(state.apply_qinv(state.apply_q(x)), x, atol=1e-12)
    np.testing.assert_allclose(state.apply_qinv_t(state.apply_qt(x)), x, atol=1e-12)


def test_lra_precond_grad_matches_dense(rng):
    n, r = 10, 4
    state = LraQ(0.5 + rng.uniform(n), 0.2 * rng.standard_normal((n, r)), 0.2 * rng.standard_normal((n, r)))
    g = rng.standard_normal(n)
    np.testing.assert_allclose(precond_grad(state, g), state.dense_p() @ g, atol=1e-12)


def test_lra_fixed_point(rng):
    """Test that H = (Q^T Q)^{-1} leaves d, U and V unchanged for any d, U, V."""
    n, r = 6, 2
    state = LraQ(0.5 + rng.uniform(n), 0.3 * rng.standard_normal((n, r)), 0.3 * rng.standard_normal((n, r)))
    H = np.linalg.inv(state.dense_p())
    H = 0.5 * (H + H.T)
    d, U, V = state.d.copy(), state.U.copy(), state.V.copy()
    for _ in range(4):
        v = rng.standard_normal(n)
        state.update(HvpPair(v, H @ v))
    np.testing.assert_allclose(state.d, d, atol=1e-10)
    np.testing.assert_allclose(state.U, U, atol=1e-10)
    np.testing.assert_allclose(state.V, V, atol=1e-10)


def test_lra_alternates_factors(rng, spd_matrix):
    state = LraQ.scaled_identity(5, rank=2, rng=rng)
    turns = []
    for _ in range(4):
        turns.append(state.turn)
        v = rng.standard_normal(5)
        state.update(HvpPair(v, spd_matrix @ v))
    assert turns == ['U', 'V', 'U', 'V']


def test_lra_group_exit():
    with pytest.raises(GroupExitError):
        LraQ([1.0], [[-1.0]], [[1.0]])


def test_lra_balance_scalar():
    state = LraQ([1.0], [[1.0]], [[0.0]])
    lra_balance(state, 0.25)
    assert state.U[0, 0] == pytest.approx(0.78125, abs=1e-15)
    assert state.V[0, 0] == 0.0


def test_lra_balance_drift_bound(rng):
    """Test that U V^T moves by at most mu^4 ||U|| ||V|| / 4."""
    n, r, mu = 12, 3, 0.25
    state = LraQ(np.ones(n), rng.standard_normal((n, r)), 0.1 * rng.standard_normal((n, r)))
    before = state.U @ state.V.T
    bound = 0.25 * mu ** 4 * np.linalg.norm(state.U, 2) * np.linalg.norm(state.V, 2)
    lra_balance(state, mu)
    assert np.linalg.norm(state.U @ state.V.T - before, 2) <= bound + 1e-12
    with pytest.raises(ValueError):
        lra_balance(state, 0.5)


def test_kron_step_scalar_factors():
    state = KronQ.scaled_identity((1, 1), 1.0, mu=1.0, beta=0.0)
    state.update(HvpPair([1.0], [4.0]))
    assert state.Q1[0, 0] == pytest.approx(2.0 / 17.0, abs=1e-15)
    assert state.Q2[0, 0] == pytest.approx(2.0 / 17.0, abs=1e-15)


def test_kron_inverse_free_scalar_factors():
    state = KronQ.scaled_identity((1, 1), 1.0, mu=1.0, beta=0.0, mode='inverse-free')
    state.update(HvpPair([1.0], [4.0]))
    assert state.method == 'kron-if'
    assert state.Q1[0, 0] == pytest.approx(2.0 / 17.0, abs=1e-15)


def test_kron_precond_grad_matches_dense(rng):
    Q1 = np.triu(rng.standard_normal((3, 3))) + 2.0 * np.eye(3)
    Q2 = np.triu(rng.standard_normal((4, 4))) + 2.0 * np.eye(4)
    state = KronQ(Q1, Q2)
    g = rng.standard_normal(12)
    np.testing.assert_allclose(state.precond_grad(g), state.dense_p() @ g, atol=1e-12)
    np.testing.assert_allclose(state.dense_q(), np.kron(Q2, Q1))


@pytest.mark.parametrize("mode", ['qr', 'inverse-free'])
def test_kron_fixed_point(mode):
    """Test that factors fitting H = H2 kron H1 are left unchanged."""
    rng = SeededRng(17)
    H1, H2 = _spd(rng, 3), _spd(rng, 2)
    if mode == 'qr':
        Q1 = scipy.linalg.cholesky(np.linalg.inv(H1), lower=False)
        Q2 = scipy.linalg.cholesky(np.linalg.inv(H2), lower=False)
    else:
        Q1, Q2 = sym_power(H1, -0.5), sym_power(H2, -0.5)
    H = np.kron(H2, H1)
    state = KronQ(Q1, Q2, mode=mode, rng=rng)
    P = state.dense_p()
    for _ in range(5):
        v = rng.standard_normal(6)
        state.update(HvpPair(v, H @ v))
    np.testing.assert_allclose(state.dense_p(), P, atol=1e-10)
    np.testing.assert_allclose(state.dense_p() @ H, np.eye(6), atol=1e-9)


def test_kron_balance_keeps_product():
    state = KronQ([[4.0, 1.0], [0.0, 2.0]], [[0.25]], balance=True)
    before = state.dense_q()
    kron_balance(state)
    np.testing.assert_allclose(state.dense_q(), before, atol=1e-15)
    assert np.abs(state.Q1).max() == pytest.approx(np.abs(state.Q2).max())
    assert np.abs(state.Q1).max() == pytest.approx(1.0)


def test_kron_rejects_unknown_mode():
    with pytest.raises(ValueError):
        KronQ(np.eye(2), np.eye(2), mode='lu')


def test_direct_sum_blocks(rng):
    first = DiagonalQ([1.0, 2.0])
    second = DiagonalQ([3.0])
    total = DirectSum([(slice(0, 2), first), (slice(2, 3), second)])
    np.testing.assert_allclose(total.precond_grad([1.0, 1.0, 1.0]), [1.0, 4.0, 9.0])
    np.testing.assert_allclose(total.dense_p(), np.diag([1.0, 4.0, 9.0]))
    total.update(HvpPair(rng.standard_normal(3), rng.standard_normal(3)))
    assert first.steps == second.steps == total.steps == 1
    with pytest.raises(DimensionError):
        DirectSum([(slice(0, 2), first), (slice(3, 4), second)])


def test_build_direct_sum_kron_shapes():
    total = build_direct_sum('kron', [(2, 3), (4, 1)], scale=0.5)
    assert total.dim == 10
    np.testing.assert_allclose(total.dense_p(), 0.25 * np.eye(10), atol=1e-15)


@pytest.mark.parametrize("method", ['diag', 'kron', 'kron-if', 'lra', 'gl', 'tri', 'qep', 'euclid', 'closed'])
def test_build_preconditioner_scale(method):
    """Test that every form starts at P0 = scale^2 I."""
    state = build_preconditioner(method, 4, scale=0.5, rng=SeededRng(0), options={'rank': 0})
    P = state.dense_p()
    if method == 'lra':
        np.testing.assert_allclose(np.diag(P), 0.25, atol=1e-15)
    else:
        np.testing.assert_allclose(P, 0.25 * np.eye(4), atol=1e-15)


def test_build_preconditioner_errors():
    with pytest.raises(ScenarioError):
        build_preconditioner('adam', 4)
    with pytest.raises(ScenarioError):
        build_preconditioner('newton', 4)
    with pytest.raises(ScenarioError):
        build_preconditioner('kron', 4, options={'shape': (3, 3)})
