"""Tests for the trajectory estimators."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import signal

from epochnoise.errors import ValidationError
from epochnoise.sim import Trajectory
from epochnoise.stats import (
    batched_means,
    compare_to_theory,
    cosine_similarity,
    estimate_autocorr,
    estimate_stationary,
    extract_lambda_cross,
    extract_tau_sgd,
    fraction_within_band,
    pca_basis,
    powerlaw_fit,
    variance_anisotropy,
    velocity_autocovariance,
)


def ar1(rng, phi, steps, width=1):
    return signal.lfilter([1.0], [1.0, -phi], rng.standard_normal((steps, width)), axis=0)


def random_walk_trajectory(theta):
    velocity = np.diff(theta, axis=0, prepend=0.0)
    return Trajectory(theta=theta, velocity=velocity)


class TestAutocorr:
    def test_white_noise_stays_in_band(self, rng):
        estimate = estimate_autocorr(rng.standard_normal((20000, 4)), max_lag=50)
        assert fraction_within_band(estimate, np.zeros(50)) >= 0.85
        assert estimate.directions == 4
        assert_allclose(estimate.band, 2.0 / np.sqrt((20000 - estimate.lags) * 4))

    def test_ar1_decay(self, rng):
        estimate = estimate_autocorr(ar1(rng, 0.8, 50000), max_lag=5)
        assert_allclose(estimate.values, 0.8 ** estimate.lags, atol=0.04)

    def test_rejects_short_or_constant_series(self, rng):
        with pytest.raises(ValidationError):
            estimate_autocorr(rng.standard_normal(50), max_lag=10)
        with pytest.raises(ValidationError):
            estimate_autocorr(np.ones((200, 2)), max_lag=5)
        with pytest.raises(ValidationError):
            estimate_autocorr(rng.standard_normal(200), max_lag=0)

    def test_velocity_autocovariance_matches_direct_sum(self, rng):
        x = rng.standard_normal(300)
        acov = velocity_autocovariance(x, 3)
        centered = x - x.mean()
        direct = [np.sum(centered[: 300 - h] * centered[h:]) / 300 for h in range(4)]
        assert_allclose(acov, direct, atol=1e-12)


def test_batched_means(rng):
    data = np.arange(103, dtype=float)
    mean, se = batched_means(data, batches=5)
    # trailing three steps dropped
    assert mean == pytest.approx(49.5)
    assert se == pytest.approx(np.std([9.5, 29.5, 49.5, 69.5, 89.5], ddof=1) / np.sqrt(5))
    with pytest.raises(ValidationError):
        batched_means(data, batches=1)
    with pytest.raises(ValidationError):
        batched_means(np.ones(3), batches=5)


class TestStationary:
    def test_ar1_weights(self, rng):
        phi = 0.9
        theta = ar1(rng, phi, 200000, width=2)
        estimate = estimate_stationary(random_walk_trajectory(theta))
        variance = 1.0 / (1.0 - phi**2)
        velocity_variance = 2.0 * variance * (1.0 - phi)
        assert_allclose(estimate.sigma_theta2, variance, rtol=0.1)
        assert_allclose(estimate.sigma_v2, velocity_variance, rtol=0.05)
        assert_allclose(estimate.tau_ratio, 1.0 / (1.0 - phi), rtol=0.1)
        assert np.all(estimate.se_sigma_theta2 > 0)
        assert estimate.tau_lag == 20000

    def test_default_tau_lag_uses_epoch_length(self, rng):
        theta = ar1(rng, 0.5, 5000)
        estimate = estimate_stationary(random_walk_trajectory(theta), batches_per_epoch=10)
        assert estimate.tau_lag == 50
        assert len(estimate) == 1

    def test_lag_sum_tau_agrees_with_ratio(self, rng):
        theta = ar1(rng, 0.9, 1_000_000)
        estimate = estimate_stationary(random_walk_trajectory(theta), tau_lag=60)
        assert estimate.tau_sum[0] == pytest.approx(estimate.tau_ratio[0], rel=0.2)
        assert not estimate.ill_conditioned[0]

    def test_uses_drift_removed_series(self, rng):
        theta = ar1(rng, 0.5, 4000)
        traj = random_walk_trajectory(theta)
        traj.shifted_theta = 3.0 * theta
        traj.shifted_velocity = 3.0 * traj.velocity
        plain = estimate_stationary(random_walk_trajectory(theta))
        shifted = estimate_stationary(traj)
        assert shifted.sigma_theta2[0] == pytest.approx(9.0 * plain.sigma_theta2[0])


class TestPca:
    def test_recovers_axes(self, rng):
        theta = rng.standard_normal((5000, 3)) * np.array([1.0, 3.0, 0.5])
        vectors, values = pca_basis(random_walk_trajectory(theta))
        assert np.all(np.diff(values) <= 0)
        assert abs(vectors[1, 0]) > 0.99
        assert abs(vectors[2, 2]) > 0.99
        assert_allclose(vectors.T @ vectors, np.eye(3), atol=1e-12)

    def test_anisotropy(self):
        series = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 2.0], [-1.0, -2.0]])
        assert variance_anisotropy(series) == pytest.approx(2.0)
        assert variance_anisotropy(np.ones((4, 2))) == float("inf")


class TestPowerLaw:
    def test_exact_line(self):
        x = np.geomspace(0.1, 100.0, 12)
        fit = powerlaw_fit(x, 3.0 * x**-0.5)
        assert fit.exponent == pytest.approx(-0.5)
        assert fit.two_sigma == pytest.approx(0.0, abs=1e-10)
        assert fit.points == 12
        assert_allclose(fit.predict(x), 3.0 * x**-0.5)

    def test_region(self):
        x = np.geomspace(0.01, 100.0, 20)
        y = np.where(x < 1.0, 5.0, 5.0 / x)
        fit = powerlaw_fit(x, y, region=(1.0, 100.0))
        assert fit.exponent == pytest.approx(-1.0)

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            powerlaw_fit([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            powerlaw_fit([1.0, 2.0, 3.0], [1.0, -2.0, 3.0])
        with pytest.raises(ValidationError):
            powerlaw_fit([1.0, 2.0, 3.0], [1.0, 2.0])


def test_cosine_similarity():
    a = np.diag([1.0, 2.0])
    assert cosine_similarity(a, 3.0 * a) == pytest.approx(1.0)
    assert cosine_similarity(a, -a) == pytest.approx(-1.0)
    assert cosine_similarity(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == 0.0
    with pytest.raises(ValidationError):
        cosine_similarity(a, np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        cosine_similarity(a, np.eye(3))


def test_compare_to_theory():
    z = compare_to_theory([1.2, 0.8, 1.0], [0.2, 0.2, 0.0], [1.0, 1.0, 1.0])
    assert_allclose(z, [2.0, -2.0, 0.0])


class TestExtraction:
    def test_tau_sgd_averages_below_crossover(self):
        lambdas = np.array([10.0, 1.0, 0.1, 0.01])
        taus = np.array([0.5, 5.0, 30.0, 34.0])
        assert extract_tau_sgd(lambdas, taus, lam_cross=0.5) == pytest.approx(32.0)
        with pytest.raises(ValidationError):
            extract_tau_sgd(lambdas, taus, lam_cross=0.001)

    def test_lambda_cross_from_synthetic_curve(self):
        lambdas = np.geomspace(1e-3, 10.0, 40)
        plateau, cross = 50.0, 0.2
        taus = np.where(lambdas < cross, plateau, plateau * cross / lambdas)
        found = extract_lambda_cross(lambdas, taus, plateau, fit_min=2 * cross)
        assert found == pytest.approx(cross, rel=1e-8)

    def test_tau_sgd_plateau_share(self):
        lambdas = np.array([10.0, 1.0, 0.1, 0.01])
        taus = np.array([0.5, 5.0, 30.0, 34.0])
        assert extract_tau_sgd(lambdas, taus, lam_cross=0.5, share=0.1) == pytest.approx(34.0)

    def test_lambda_cross_with_fixed_slope(self):
        lambdas = np.geomspace(1e-3, 10.0, 40)
        plateau, cross = 50.0, 0.2
        taus = np.where(lambdas < cross, plateau, plateau * cross / lambdas)
        # a bent curve above the crossover would steepen a free fit
        taus = np.where(lambdas > 2 * cross, taus * (1.0 - 0.2 * 2 * cross / lambdas), taus)
        fixed = extract_lambda_cross(lambdas, taus, plateau, fit_min=5 * cross, slope=-1.0)
        free = extract_lambda_cross(lambdas, taus, plateau, fit_min=5 * cross)
        assert abs(fixed / cross - 1.0) < abs(free / cross - 1.0)
        assert fixed == pytest.approx(cross, rel=0.15)
        with pytest.raises(ValidationError):
            extract_lambda_cross(lambdas, taus, plateau, fit_min=100.0, slope=-1.0)
