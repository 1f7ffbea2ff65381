import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decorgd.decorrelation import (DecorrelationError, DecorrelationState,
                                   RecurrentConvergenceError, activity_norm_ratio,
                                   antihebbian_update, compute_gain, correlation_report,
                                   decorrelate, recurrent_decorrelate,
                                   sherman_morrison_inverse_update, update_decorrelation,
                                   zca_whitening)


def gaussian_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    return L @ rng.standard_normal((2, n))


def run_updates(state, X, steps):
    for _ in range(steps):
        state = update_decorrelation(state, X)
    return state


# -- decorrelate ---------------------------------------------------------------

def test_identity_state_passes_input_through():
    state = DecorrelationState.identity(2)
    np.testing.assert_array_equal(decorrelate(state, np.array([1.0, 2.0])), [[1.0], [2.0]])


def test_affine_transform_by_hand():
    state = DecorrelationState(M=2 * np.eye(2), mu=np.array([1.0, 1.0]))
    np.testing.assert_allclose(decorrelate(state, np.array([[1.0], [2.0]])), [[0.0], [2.0]])


def test_input_batch_is_not_modified():
    X = np.arange(6.0).reshape(2, 3)
    before = X.copy()
    decorrelate(DecorrelationState(M=np.ones((2, 2)), mu=np.ones(2)), X)
    np.testing.assert_array_equal(X, before)


def test_dimension_mismatch_names_both_sizes():
    with pytest.raises(DecorrelationError, match=r"3 rows.*n=2"):
        decorrelate(DecorrelationState.identity(2), np.zeros((3, 4)))


def test_learned_matrix_matches_zca_statistics():
    X = gaussian_pair(0.8, 4000, 0)
    state = run_updates(DecorrelationState.identity(2, eta_M=1e-2), X, 500)
    ours = correlation_report(decorrelate(state, X)).C
    oracle = correlation_report(zca_whitening(X) @ X).C
    assert abs(ours[0, 1]) < 0.05
    assert abs(oracle[0, 1]) < 1e-10
    assert abs(ours[0, 1] - oracle[0, 1]) < 0.05


# -- correlation_report --------------------------------------------------------

def test_orthogonal_columns():
    rep = correlation_report(np.eye(2))
    np.testing.assert_allclose(rep.C, 0.5 * np.eye(2))
    assert rep.off_diag_loss == 0.0


def test_single_column():
    rep = correlation_report(np.array([[1.0], [1.0]]))
    np.testing.assert_allclose(rep.C, np.ones((2, 2)))
    assert rep.off_diag_loss == pytest.approx(1.0)


def test_empty_batch_is_an_error():
    with pytest.raises(DecorrelationError):
        correlation_report(np.zeros((3, 0)))


def test_white_noise_off_diagonal_loss_sampling_bound():
    B = 10_000
    X = np.random.default_rng(1).standard_normal((8, B))
    # each off-diagonal entry is ~N(0, 1/B), so the mean square is about 1/B
    assert correlation_report(X).off_diag_loss < 3.0 / B


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-10, 10)))
def test_report_is_symmetric_and_nonnegative(X):
    rep = correlation_report(X)
    np.testing.assert_array_equal(rep.C, rep.C.T)
    assert rep.off_diag_loss >= 0.0
    assert np.all(np.diag(rep.C) >= 0)


# -- compute_gain --------------------------------------------------------------

def test_gain_is_one_when_unchanged(rng):
    X = rng.standard_normal((5, 20))
    np.testing.assert_allclose(compute_gain(X, X), np.ones(5))


def test_gain_restores_halved_activity(rng):
    X = rng.standard_normal((5, 20))
    np.testing.assert_allclose(compute_gain(X, X / 2), 2 * np.ones(5))


def test_gain_guard_for_zero_output(rng):
    X = rng.standard_normal((5, 20))
    np.testing.assert_array_equal(compute_gain(np.zeros_like(X), np.zeros_like(X)), np.ones(5))
    # silent output with live input would need an infinite gain; the floor keeps it finite
    assert np.all(np.isfinite(compute_gain(X, np.zeros_like(X))))


def test_scalar_gain_is_one_ratio_for_the_layer(rng):
    X = rng.standard_normal((4, 30))
    X_hat = X * np.array([[1.0], [2.0], [3.0], [4.0]])
    g = compute_gain(X, X_hat, mode="scalar")
    expected = np.sqrt(np.sum(X ** 2) / np.sum(X_hat ** 2))
    np.testing.assert_allclose(g, np.full(4, expected))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 9), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 9), elements=st.floats(-5, 5)))
def test_gain_restores_mean_square_exactly(X, X_hat):
    num = np.mean(X ** 2, axis=1)
    den = np.mean(X_hat ** 2, axis=1)
    g = compute_gain(X, X_hat)
    live = (num >= 1e-8) & (den >= 1e-8)
    np.testing.assert_allclose(np.mean((g[:, None] * X_hat) ** 2, axis=1)[live], num[live],
                               rtol=1e-9)


# -- update_decorrelation ------------------------------------------------------

def white_batch(n, B, seed):
    Z = np.random.default_rng(seed).standard_normal((n, B))
    Z = Z - Z.mean(axis=1, keepdims=True)
    return zca_whitening(Z) @ Z


def test_zero_rate_on_white_data_keeps_identity():
    new = update_decorrelation(DecorrelationState.identity(3), white_batch(3, 500, 2))
    np.testing.assert_allclose(new.M, np.eye(3), atol=1e-12)


def scalar_fixed_point(eta, steps=20_000):
    m = 1.0
    for _ in range(steps):
        m = 1.0 - eta * m * m
    return m


@pytest.mark.parametrize("eta", [1e-3, 1e-2, 0.1])
def test_scalar_dynamics_fixed_point(eta):
    Z = white_batch(3, 1000, 3)
    closed = (np.sqrt(1 + 4 * eta) - 1) / (2 * eta)
    assert scalar_fixed_point(eta) == pytest.approx(closed, rel=1e-10)
    # M = m I stays scalar on white data; the gain maps m to 1 - eta m^2
    state = DecorrelationState(M=np.eye(3), mu=np.zeros(3), eta_M=eta, gain_mode="scalar")
    state = run_updates(state, Z, 200)
    np.testing.assert_allclose(state.M, closed * np.eye(3), atol=1e-6)


def test_correlated_pair_reaches_small_loss():
    X = gaussian_pair(0.8, 4000, 4)
    X = X - X.mean(axis=1, keepdims=True)
    state = run_updates(DecorrelationState.identity(2, eta_M=1e-2), X, 500)
    ours = correlation_report(decorrelate(state, X)).off_diag_loss
    zca = correlation_report(zca_whitening(X) @ X).off_diag_loss
    assert ours < 0.0025
    assert zca < 0.0025


def test_update_uses_pre_update_mean(rng):
    X = rng.standard_normal((3, 50)) + 2.0
    state = DecorrelationState(M=np.eye(3) + 0.1, mu=np.array([0.5, -0.5, 0.0]), eta_M=0.05)
    new = update_decorrelation(state, X)
    centred = X - state.mu[:, None]
    X_hat = state.M @ centred
    C = X_hat @ X_hat.T / 50
    g = np.sqrt(np.mean(centred ** 2, axis=1) / np.mean(X_hat ** 2, axis=1))
    np.testing.assert_allclose(new.M, np.diag(g) @ (state.M - 0.05 * C @ state.M))
    np.testing.assert_allclose(new.mu, state.mu + 0.1 * (X.mean(axis=1) - state.mu))


def test_overflow_raises_with_rate_hint(rng):
    state = DecorrelationState(M=np.eye(2) * 1e150, mu=np.zeros(2), eta_M=1e10)
    with np.errstate(all="ignore"), pytest.raises(DecorrelationError, match="eta_M"):
        update_decorrelation(state, rng.standard_normal((2, 10)))


def test_off_diagonal_loss_decreases_monotonically():
    X = gaussian_pair(0.6, 2000, 5)
    X = X - X.mean(axis=1, keepdims=True)
    lam = np.linalg.eigvalsh(X @ X.T / X.shape[1]).max()
    state = DecorrelationState.identity(2, eta_M=1e-2 / lam)
    losses = []
    for _ in range(200):
        state = update_decorrelation(state, X)
        losses.append(correlation_report(decorrelate(state, X)).off_diag_loss)
    assert np.all(np.diff(losses) <= 1e-15)


def test_activity_norm_ratio_stays_near_one():
    X = gaussian_pair(0.8, 2000, 6)
    X = X - X.mean(axis=1, keepdims=True)
    state = DecorrelationState.identity(2, eta_M=1e-2)
    for step in range(1, 201):
        state = update_decorrelation(state, X)
        if step > 10:
            assert 0.8 <= activity_norm_ratio(state, X) <= 1.25


def test_state_validation():
    with pytest.raises(DecorrelationError):
        DecorrelationState(M=np.eye(2), mu=np.zeros(3))
    with pytest.raises(DecorrelationError):
        DecorrelationState(M=np.ones((2, 3)), mu=np.zeros(2))
    with pytest.raises(DecorrelationError):
        DecorrelationState.identity(2, eta_M=-1.0)
    with pytest.raises(DecorrelationError):
        DecorrelationState.identity(2, gain_mode="layer")


def test_antihebbian_baseline_leaves_diagonal_alone():
    X = np.diag([1.0, 2.0]) @ np.random.default_rng(7).standard_normal((2, 100))
    X_bar = X
    C = X_bar @ X_bar.T / 100
    expected = np.eye(2) - 0.1 * (C - np.diag(np.diag(C)))
    np.testing.assert_allclose(antihebbian_update(np.eye(2), X, 0.1), expected)


# -- Sherman-Morrison ----------------------------------------------------------

def test_sherman_morrison_zero_step():
    M_inv = np.random.default_rng(8).standard_normal((3, 3))
    np.testing.assert_array_equal(
        sherman_morrison_inverse_update(M_inv, np.ones(3), 0.0, 1.0), M_inv)


def test_sherman_morrison_rank_one_on_identity():
    e1 = np.array([1.0, 0, 0, 0])
    out = sherman_morrison_inverse_update(np.eye(4), e1, 0.1, 1.0)
    np.testing.assert_allclose(out, np.eye(4) + 0.1 * np.outer(e1, e1))


def sm_error(M, x_hat, eta, g):
    updated = np.diag(np.broadcast_to(g, M.shape[:1])) @ (M - eta * np.outer(x_hat, x_hat) @ M)
    exact = np.linalg.inv(updated)
    approx = sherman_morrison_inverse_update(np.linalg.inv(M), x_hat, eta, g)
    return np.linalg.norm(approx - exact)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("gain", ["scalar", "vector"])
def test_sherman_morrison_second_order_error(seed, gain):
    rng = np.random.default_rng(seed)
    M = np.eye(4) + 0.3 * rng.standard_normal((4, 4))
    x_hat = rng.standard_normal(4)
    g = 1.3 if gain == "scalar" else rng.uniform(0.5, 2.0, 4)
    eta = 1e-3 / (x_hat @ x_hat)
    ratio = sm_error(M, x_hat, eta, g) / sm_error(M, x_hat, eta / 2, g)
    assert 3.5 <= ratio <= 4.5


# -- recurrent relaxation ------------------------------------------------------

def test_recurrent_identity_converges_in_one_step():
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(recurrent_decorrelate(np.eye(3), x, max_iters=1), x)


def test_recurrent_diagonal_closed_form():
    out = recurrent_decorrelate(np.diag([2.0, 0.5]), np.array([1.0, 1.0]), tol=1e-12)
    np.testing.assert_allclose(out, [2.0, 0.5], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_recurrent_random_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    M = Q @ np.diag(rng.uniform(0.5, 2.0, 5)) @ Q.T
    x = rng.standard_normal(5)
    target = M @ x
    out = recurrent_decorrelate(M, x)
    assert np.linalg.norm(out - target) / np.linalg.norm(target) < 1e-8


def test_recurrent_explicit_step():
    out = recurrent_decorrelate(np.diag([2.0, 0.5]), np.array([1.0, 1.0]), step=0.2, tol=1e-12)
    np.testing.assert_allclose(out, [2.0, 0.5], atol=1e-11)


def test_recurrent_singular_matrix():
    with pytest.raises(DecorrelationError, match="singular"):
        recurrent_decorrelate(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))


def test_recurrent_non_convergence_carries_residual():
    M = np.diag([2.0, 0.5])
    with pytest.raises(RecurrentConvergenceError) as info:
        recurrent_decorrelate(M, np.ones(2), max_iters=3)
    assert info.value.residual > 0


def test_recurrent_unstable_spectrum():
    # M^-1 with a negative eigenvalue has no stable forward-Euler step
    with pytest.raises(DecorrelationError, match="unstable"):
        recurrent_decorrelate(np.diag([1.0, -1.0]), np.ones(2))
