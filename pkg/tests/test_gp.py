"""Gaussian-process regression tests against closed-form small cases."""

import math

import numpy as np
import pytest

from cellcal.errors import IllConditionedError
from cellcal.gp import (
    FeatureScaler,
    KernelHyperparameters,
    build_phi_n,
    chol_unit,
    gpr_predict,
    hybrid_predict,
    kernel,
    load_hyperparameters,
    save_hyperparameters,
)


# ---------------------------------------------------------------------------
# hyperparameters and scaler
# ---------------------------------------------------------------------------

def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        KernelHyperparameters(sigma2_f=0.0, length_scales=(1.0,))
    with pytest.raises(ValueError):
        KernelHyperparameters(sigma2_f=1.0, length_scales=(1.0, -2.0))
    with pytest.raises(ValueError):
        KernelHyperparameters(sigma2_f=1.0, length_scales=(1.0,), sigma2_n_tilde=-0.1)


def test_noise_variance_scales_with_signal_variance():
    hp = KernelHyperparameters(sigma2_f=4.0, length_scales=(1.0,), sigma2_n_tilde=0.1)
    assert hp.sigma2_n == pytest.approx(0.4)


def test_feature_scaler_standardizes():
    rng = np.random.default_rng(0)
    X = rng.normal(3.0, 5.0, size=(200, 4))
    scaler = FeatureScaler.fit(X)
    Z = scaler.transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, rtol=1e-12)


def test_feature_scaler_constant_column_passthrough():
    X = np.column_stack([np.full(50, 7.0), np.linspace(0.0, 1.0, 50)])
    scaler = FeatureScaler.fit(X)
    Z = scaler.transform(X)
    # constant column is centered but not scaled: exactly zero, no NaN/inf
    np.testing.assert_array_equal(Z[:, 0], 0.0)
    assert np.all(np.isfinite(Z))


def test_feature_scaler_round_trip():
    scaler = FeatureScaler(mean=np.array([1.0, -2.0]), scale=np.array([3.0, 0.5]))
    again = FeatureScaler.from_dict(scaler.to_dict())
    np.testing.assert_array_equal(again.mean, scaler.mean)
    np.testing.assert_array_equal(again.scale, scaler.scale)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def test_kernel_two_point_hand_value():
    x = np.array([[1.0, 2.0]])
    z = np.array([[2.0, 0.0]])
    l = (2.0, 4.0)
    expected = 3.0 * math.exp(-0.5 * ((1.0 / 2.0) ** 2 + (2.0 / 4.0) ** 2))
    assert kernel(x, z, l, sigma2_f=3.0)[0, 0] == pytest.approx(expected, rel=1e-14)


def test_kernel_symmetry_and_unit_diagonal():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 3))
    K = kernel(X, X, (1.0, 0.5, 2.0))
    np.testing.assert_allclose(K, K.T, atol=0.0)
    np.testing.assert_allclose(np.diag(K), 1.0, atol=0.0)
    assert np.all(K <= 1.0 + 1e-15) and np.all(K > 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_kernel_gram_is_positive_semidefinite(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(60, 2))
    K = kernel(X, X, (0.7, 1.3))
    eigs = np.linalg.eigvalsh(K)
    assert eigs.min() > -1e-8


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel(np.zeros((3, 2)), np.zeros((3, 2)), (1.0,))


def test_build_phi_n_adds_noise_diagonal():
    X = np.random.default_rng(2).normal(size=(25, 2))
    phi = kernel(X, X, (1.0, 1.0))
    phi_n = build_phi_n(X, (1.0, 1.0), 0.1)
    np.testing.assert_allclose(phi_n - phi, 0.1 * np.eye(25), atol=1e-15)


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

def test_chol_unit_exact_when_well_conditioned():
    L, jitter = chol_unit(np.eye(4))
    assert jitter == 0.0
    np.testing.assert_array_equal(L, np.eye(4))


def test_chol_unit_escalates_jitter_on_near_singular():
    X = np.zeros((12, 1))  # twelve identical points: rank-1 Gram plus nothing
    phi = build_phi_n(X, (1.0,), 0.0)
    L, jitter = chol_unit(phi)
    assert jitter > 0.0
    assert np.all(np.isfinite(L))


def test_chol_unit_raises_on_indefinite():
    M = np.diag([1.0, -1.0])
    with pytest.raises(IllConditionedError) as err:
        chol_unit(M)
    assert math.isfinite(err.value.condition)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def _smooth_targets(X):
    return np.sin(X[:, 0]) + 0.3 * np.cos(2.0 * X[:, 1])


def test_noise_free_gp_interpolates_training_targets():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2.0, 2.0, size=(50, 2))
    y = _smooth_targets(X)
    hp = KernelHyperparameters(sigma2_f=1.0, length_scales=(1.0, 1.0), sigma2_n_tilde=0.0)
    mean, _ = gpr_predict(X, y, X, hp)
    assert np.max(np.abs(mean - y)) < 1e-6


def test_single_point_posterior_closed_form():
    # one observation, no noise: mean(x) = y0 k(x,x0); var(x) = s2f (1 - k^2)
    x0, y0, l, s2f = 0.5, 2.0, 1.5, 0.8
    hp = KernelHyperparameters(sigma2_f=s2f, length_scales=(l,), sigma2_n_tilde=0.0)
    xs = np.array([[0.5], [1.0], [3.0]])
    mean, cov = gpr_predict(np.array([[x0]]), np.array([y0]), xs, hp)
    for i, x in enumerate(xs[:, 0]):
        k = math.exp(-0.5 * ((x - x0) / l) ** 2)
        assert mean[i] == pytest.approx(y0 * k, rel=1e-10)
        assert cov[i, i] == pytest.approx(s2f * (1.0 - k * k), abs=1e-10)


def test_posterior_covariance_symmetric_with_noise_floor():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1.0, 1.0, size=(30, 2))
    y = _smooth_targets(X)
    hp = KernelHyperparameters(sigma2_f=2.0, length_scales=(0.8, 0.8), sigma2_n_tilde=0.05)
    Xs = rng.uniform(-1.0, 1.0, size=(10, 2))
    _, cov = gpr_predict(X, y, Xs, hp)
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
    assert np.all(np.diag(cov) >= hp.sigma2_n - 1e-12)


def test_far_test_point_reverts_to_prior():
    X = np.linspace(0.0, 1.0, 20).reshape(-1, 1)
    y = np.sin(X[:, 0])
    hp = KernelHyperparameters(sigma2_f=1.7, length_scales=(0.2,), sigma2_n_tilde=0.01)
    mean, cov = gpr_predict(X, y, np.array([[50.0]]), hp)
    assert mean[0] == pytest.approx(0.0, abs=1e-8)
    assert cov[0, 0] == pytest.approx(hp.sigma2_f + hp.sigma2_n, rel=1e-8)


def test_heavy_noise_shrinks_posterior_mean():
    X = np.linspace(0.0, 1.0, 15).reshape(-1, 1)
    y = np.full(15, 3.0)
    hp = KernelHyperparameters(sigma2_f=1.0, length_scales=(0.3,), sigma2_n_tilde=1e4)
    mean, _ = gpr_predict(X, y, X, hp)
    assert np.all(np.abs(mean) < 0.05)


def test_scaler_changes_effective_length_scales():
    rng = np.random.default_rng(5)
    X = rng.normal(0.0, 100.0, size=(40, 1))  # wide raw scale
    y = np.tanh(X[:, 0] / 100.0)
    hp = KernelHyperparameters(sigma2_f=1.0, length_scales=(1.0,), sigma2_n_tilde=1e-6)
    scaler = FeatureScaler.fit(X)
    mean_scaled, _ = gpr_predict(X, y, X, hp, scaler=scaler)
    # standardized inputs make a unit length scale appropriate: near-interpolation
    assert np.max(np.abs(mean_scaled - y)) < 1e-3


def test_gpr_predict_validates_shapes():
    hp = KernelHyperparameters(sigma2_f=1.0, length_scales=(1.0,))
    with pytest.raises(ValueError):
        gpr_predict(np.zeros((5, 1)), np.zeros(4), np.zeros((2, 1)), hp)


# ---------------------------------------------------------------------------
# hybrid correction and persistence
# ---------------------------------------------------------------------------

def test_hybrid_predict_adds_elementwise():
    v = np.array([3.0, 3.1, 3.2])
    d = np.array([0.01, -0.02, 0.0])
    np.testing.assert_allclose(hybrid_predict(v, d), [3.01, 3.08, 3.2])
    with pytest.raises(ValueError):
        hybrid_predict(v, d[:2])


def test_hyperparameters_yaml_round_trip(tmp_path):
    hp = KernelHyperparameters(
        sigma2_f=0.37, length_scales=(1.5, 0.01, 88.0, 2.0), sigma2_n_tilde=0.1
    )
    scaler = FeatureScaler(mean=np.array([1.0, 2.0, 3.0, 4.0]),
                           scale=np.array([0.1, 1.0, 10.0, 100.0]))
    path = tmp_path / "hp.yaml"
    save_hyperparameters(path, hp, scaler)
    hp2, scaler2 = load_hyperparameters(path)
    assert hp2 == hp
    np.testing.assert_array_equal(scaler2.mean, scaler.mean)
    np.testing.assert_array_equal(scaler2.scale, scaler.scale)
    save_hyperparameters(path, hp, None)
    hp3, scaler3 = load_hyperparameters(path)
    assert hp3 == hp and scaler3 is None
