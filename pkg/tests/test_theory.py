"""Tests for the stationary theory."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import linalg

from epochnoise.errors import DegenerateEpochError, StabilityError, ValidationError
from epochnoise.model import Hyperparams, Spectrum
from epochnoise.theory import (
    TransferAlgebra,
    approx_large,
    approx_small,
    exact_stationary,
    exact_stationary_uncorrelated,
    flatness,
    lambda_cross,
    loss_fluctuation,
    lyapunov_oracle,
    regime,
    regime_predicates,
    stationary_table,
    tau_sgd,
)


@pytest.fixture
def reference_hp():
    """eta=0.01, beta=0.9, M=100."""
    return Hyperparams.from_batches(eta=0.01, beta=0.9, batches=100, batch_size=4)


def test_scales(reference_hp):
    assert lambda_cross(reference_hp) == pytest.approx(0.3)
    assert tau_sgd(reference_hp) == pytest.approx(100 / 3 * 19)


def test_two_batch_epoch_by_hand():
    # beta = 0, M = 2: theta_k = rho theta_{k-1} - eta dg_k with lag-1 kernel -1/2
    hp = Hyperparams.from_batches(eta=0.1, beta=0.0, batches=2)
    lam, sigma2 = 3.0, 2.0
    x = hp.eta * lam
    theta2, v2, tau = exact_stationary(lam, sigma2, hp)
    assert theta2 == pytest.approx(hp.eta**2 * sigma2 / (2.0 - x), rel=1e-12)
    assert v2 == pytest.approx(hp.eta**2 * sigma2 * (2.0 + x) / (2.0 - x), rel=1e-12)
    assert tau == pytest.approx(2.0 / (2.0 + x), rel=1e-12)


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
@pytest.mark.parametrize("M", [2, 10, 40])
@pytest.mark.parametrize("fraction", [0.01, 0.2, 0.9])
def test_exact_matches_lyapunov_oracle(beta, M, fraction):
    hp = Hyperparams.from_batches(eta=0.1, beta=beta, batches=M)
    lam = fraction * 2.0 * (1.0 + beta) / hp.eta
    theta2, v2, _ = exact_stationary(lam, 1.5, hp)
    theta2_oracle, v2_oracle = lyapunov_oracle(lam, 1.5, hp)
    assert_allclose([theta2, v2], [theta2_oracle, v2_oracle], rtol=1e-8)


@pytest.mark.parametrize("beta", [0.0, 0.7])
def test_uncorrelated_matches_discrete_lyapunov(beta):
    hp = Hyperparams.from_batches(eta=0.05, beta=beta, batches=20)
    lam = 4.0
    theta2, v2, tau = exact_stationary_uncorrelated(lam, 1.0, hp)
    algebra = TransferAlgebra.for_direction(lam, hp)
    cov = linalg.solve_discrete_lyapunov(algebra.D, hp.eta**2 * np.outer([1, 0], [1, 0]))
    assert theta2 == pytest.approx(cov[0, 0], rel=1e-10)
    assert v2 == pytest.approx(2.0 * (cov[0, 0] - cov[0, 1]), rel=1e-10)
    assert lyapunov_oracle(lam, 1.0, hp, kernel="uncorrelated")[0] == pytest.approx(
        theta2, rel=1e-8
    )
    assert tau == pytest.approx((1.0 + beta) / (hp.eta * lam))


def test_matrix_form_matches_vectorized(reference_hp):
    for lam in (0.003, 0.3, 30.0):
        algebra = TransferAlgebra.for_direction(lam, reference_hp)
        assert_allclose(
            algebra.stationary(2.0), exact_stationary(lam, 2.0, reference_hp), rtol=1e-9
        )


def test_lag_sum_closed_form():
    hp = Hyperparams.from_batches(eta=0.1, beta=0.5, batches=6)
    algebra = TransferAlgebra.for_direction(5.0, hp)
    assert_allclose(algebra.lag_sum, algebra.closed_form_lag_sum, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("eta_lam", [0.05, 1.0, 2.5])
def test_eigen_power_matches_matrix_power(eta_lam):
    hp = Hyperparams.from_batches(eta=1.0, beta=0.5, batches=4)
    algebra = TransferAlgebra.for_direction(eta_lam, hp)
    for n in (0, 1, 7, 25):
        assert_allclose(algebra.eigen_power(n), algebra.matrix_power(n), atol=1e-12)


def test_eigen_power_rejects_critical_damping():
    # (1 - beta)^2 = eta*lam (2(1+beta) - eta*lam) at beta = 0, eta*lam = 1
    hp = Hyperparams.from_batches(eta=1.0, beta=0.0, batches=4)
    with pytest.raises(ValidationError):
        TransferAlgebra.for_direction(1.0, hp).eigen_power(3)


def test_spectral_radius_below_one_when_stable(reference_hp):
    for lam in np.geomspace(1e-4, 379.0, 25):
        assert TransferAlgebra.for_direction(lam, reference_hp).spectral_radius < 1.0


def test_crossover(reference_hp):
    lam = lambda_cross(reference_hp)
    exact = exact_stationary(lam, lam, reference_hp)[0]
    large = approx_large(lam, lam, reference_hp)[0]
    small = approx_small(lam, lam, reference_hp)[0]
    assert large == pytest.approx(small, rel=0.05)
    assert exact <= min(large, small)


def test_small_lambda_plateau():
    hp = Hyperparams.from_batches(eta=0.01, beta=0.5, batches=400)
    lam = lambda_cross(hp) / 1000.0
    assert exact_stationary(lam, lam, hp)[2] == pytest.approx(tau_sgd(hp), rel=0.05)


def test_large_lambda_tau(reference_hp):
    lam = 20.0 * lambda_cross(reference_hp)
    tau = exact_stationary(lam, lam, reference_hp)[2]
    assert tau == pytest.approx((1.0 + reference_hp.beta) / (reference_hp.eta * lam), rel=0.15)


def test_tau_falls_from_plateau(reference_hp):
    cross = lambda_cross(reference_hp)
    flat = exact_stationary(cross / 100, 1.0, reference_hp)[2]
    sharp = exact_stationary(cross * 30, 1.0, reference_hp)[2]
    assert flat > 10 * sharp


def test_zero_noise(reference_hp):
    theta2, v2, tau = exact_stationary(0.3, 0.0, reference_hp)
    assert theta2 == 0.0 and v2 == 0.0
    assert math.isnan(tau)
    assert lyapunov_oracle(0.3, 0.0, reference_hp) == (0.0, 0.0)


def test_input_validation(reference_hp):
    with pytest.raises(StabilityError):
        exact_stationary(400.0, 1.0, reference_hp)
    with pytest.raises(ValidationError):
        exact_stationary(0.0, 1.0, reference_hp)
    with pytest.raises(ValidationError):
        exact_stationary(1.0, -1.0, reference_hp)
    with pytest.raises(DegenerateEpochError):
        exact_stationary(1.0, 1.0, Hyperparams(eta=0.01, beta=0.0, batch_size=8, num_examples=8))
    with pytest.raises(ValidationError):
        lyapunov_oracle(1.0, 1.0, reference_hp, kernel="bogus")


def test_regimes(reference_hp):
    cross = lambda_cross(reference_hp)
    assert regime(cross / 10, reference_hp) == "small"
    assert regime(cross, reference_hp) == "near-crossover"
    assert regime(cross * 10, reference_hp) == "large"
    predicates = regime_predicates(cross * 10, reference_hp)
    assert predicates["above_cross"] is True
    # M (eta lam)^2 = 100 * 0.03^2 = 0.09
    assert predicates["strict_large"] is False


def test_flatness():
    assert_allclose(flatness([4.0, 0.25]), [0.5, 2.0])


def test_stationary_table(reference_hp):
    spectrum = Spectrum.log_spaced(0.003, 3.0, 12, c=2.0)
    table = stationary_table(spectrum, reference_hp)
    assert len(table) == 12
    rows = table.rows()
    assert rows[0]["lambda"] == pytest.approx(3.0)
    assert rows[0]["regime"] == "large"
    assert rows[-1]["regime"] == "small"
    for row in rows:
        theta2, v2, tau = exact_stationary(row["lambda"], row["sigma_dg2"], reference_hp)
        assert row["sigma_theta2_exact"] == pytest.approx(theta2, rel=1e-12)
        assert row["sigma_v2_exact"] == pytest.approx(v2, rel=1e-12)
        assert row["tau_exact"] == pytest.approx(tau, rel=1e-12)
        assert row["sigma_theta2_large"] == pytest.approx(
            approx_large(row["lambda"], row["sigma_dg2"], reference_hp)[0], rel=1e-12
        )


def test_stationary_table_checks_stability(reference_hp):
    with pytest.raises(StabilityError):
        stationary_table(Spectrum.log_spaced(1.0, 500.0, 4), reference_hp)


def test_loss_fluctuation(reference_hp):
    spectrum = Spectrum.log_spaced(0.3e-3, 0.6, 200, c=1.0)
    exact = stationary_table(spectrum, reference_hp).sigma_theta2
    result = loss_fluctuation(spectrum, exact, reference_hp)
    assert result.total == pytest.approx(float(np.sum(0.5 * spectrum.lambdas * exact)))
    assert result.ratio < 1.0

    uniform = loss_fluctuation(spectrum, np.full(200, 2.0))
    assert uniform.ratio == pytest.approx(1.0)

    with pytest.raises(ValidationError):
        loss_fluctuation(spectrum, np.ones(3))
