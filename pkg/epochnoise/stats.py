"""Estimators over recorded trajectories.

Error bars come from batched means and are reported as 2 sigma.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy import stats as sps

from .errors import ValidationError
from .log_setup import get_logger

logger = get_logger(__name__)

DEFAULT_ERROR_BATCHES = 20


def _as_columns(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValidationError("series must be 1-D or (steps, directions)")
    return x


def _autocovariance(x: np.ndarray, max_lag: int, center: bool = True) -> np.ndarray:
    """Biased autocovariance (divided by T) for lags 0..max_lag, per column, via FFT."""
    steps = x.shape[0]
    if center:
        x = x - x.mean(axis=0)
    size = 1 << (2 * steps - 1).bit_length()
    spectrum = np.fft.rfft(x, n=size, axis=0)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), n=size, axis=0)[: max_lag + 1]
    return acov / steps


@dataclass
class AutocorrEstimate:
    """Direction-averaged normalized autocorrelation for lags 1..L."""

    lags: np.ndarray
    values: np.ndarray
    band: np.ndarray  # 2 sigma sampling half-width per lag
    length: int
    directions: int

    def within_band(self, expected: np.ndarray) -> np.ndarray:
        return np.abs(self.values - np.asarray(expected)) <= self.band


def estimate_autocorr(series, max_lag: int, center: bool = True) -> AutocorrEstimate:
    """Average over directions of c_i(h) / c_i(0), biased normalization.

    Args:
        series: (steps, directions) array, or a single 1-D series
        max_lag: Largest lag L; needs steps >= 10 L
        center: Subtract each direction's mean first

    Raises:
        ValidationError: Too short a series, or a direction with zero variance
    """
    x = _as_columns(series)
    steps, directions = x.shape
    if max_lag < 1:
        raise ValidationError(f"max_lag must be >= 1, got {max_lag}")
    if steps < 10 * max_lag:
        raise ValidationError(
            f"need at least {10 * max_lag} steps for max_lag={max_lag}, got {steps}"
        )
    acov = _autocovariance(x, max_lag, center=center)
    if np.any(acov[0] <= 0):
        raise ValidationError("series has a direction with zero variance")
    values = (acov[1:] / acov[0]).mean(axis=1)
    lags = np.arange(1, max_lag + 1)
    band = 2.0 / np.sqrt((steps - lags) * directions)
    return AutocorrEstimate(
        lags=lags, values=values, band=band, length=steps, directions=directions
    )


def fraction_within_band(estimate: AutocorrEstimate, expected) -> float:
    """Share of lags whose value lies within the band around ``expected``."""
    return float(np.mean(estimate.within_band(expected)))


def velocity_autocovariance(v, max_lag: int) -> np.ndarray:
    """Biased, centered autocovariance for lags 0..max_lag; shape follows the input."""
    x = np.asarray(v, dtype=float)
    acov = _autocovariance(_as_columns(x), max_lag)
    return acov[:, 0] if x.ndim == 1 else acov


def batched_means(x, batches: int = DEFAULT_ERROR_BATCHES) -> tuple[np.ndarray, np.ndarray]:
    """Mean and its 1 sigma standard error from ``batches`` contiguous batch means.

    Trailing steps that do not fill a batch are dropped.
    """
    data = np.asarray(x, dtype=float)
    if batches < 2:
        raise ValidationError("need at least two batches")
    length = data.shape[0] // batches
    if length < 1:
        raise ValidationError(f"{data.shape[0]} steps cannot fill {batches} batches")
    blocks = data[: length * batches].reshape(batches, length, *data.shape[1:])
    means = blocks.mean(axis=1)
    return means.mean(axis=0), means.std(axis=0, ddof=1) / math.sqrt(batches)


@dataclass
class EmpiricalStationary:
    """Per-direction stationary estimates; ``se_*`` are 2 sigma batched-means errors."""

    sigma_theta2: np.ndarray
    sigma_v2: np.ndarray
    tau_ratio: np.ndarray
    tau_sum: np.ndarray
    se_sigma_theta2: np.ndarray
    se_sigma_v2: np.ndarray
    se_tau_ratio: np.ndarray
    tau_lag: int
    ill_conditioned: np.ndarray  # tau_sum denominator within 2 standard errors of zero

    def __len__(self) -> int:
        return self.sigma_theta2.size


def tau_sum_terms(v, max_lag: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Numerator, denominator and rough denominator error of the lag-sum tau.

    tau = sum_{n=1}^{L} n c(n) / sum_{n=1}^{L} c(n) with c the velocity
    autocovariance. The denominator error uses var ~ (L/T) sum_{|j|<=L} c(j)^2.
    """
    x = _as_columns(v)
    acov = _autocovariance(x, max_lag)
    n = np.arange(1, max_lag + 1)[:, None]
    numerator = np.sum(n * acov[1:], axis=0)
    denominator = np.sum(acov[1:], axis=0)
    spread = acov[0] ** 2 + 2.0 * np.sum(acov[1:] ** 2, axis=0)
    error = np.sqrt(max_lag / x.shape[0] * spread)
    return numerator, denominator, error


def estimate_stationary(
    trajectory,
    batches: int = DEFAULT_ERROR_BATCHES,
    tau_lag: Optional[int] = None,
    batches_per_epoch: Optional[int] = None,
) -> EmpiricalStationary:
    """Variances of the (drift-removed) weights and velocities, and both tau estimates.

    Args:
        trajectory: Trajectory; its shifted series are used when present
        batches: Batched-means batch count
        tau_lag: Truncation lag of the lag-sum tau (default min(5M, T/10))
        batches_per_epoch: M, used for the default truncation lag
    """
    theta = _as_columns(trajectory.weights())
    v = _as_columns(trajectory.velocities())
    steps = theta.shape[0]
    if tau_lag is None:
        tau_lag = steps // 10
        if batches_per_epoch:
            tau_lag = min(5 * batches_per_epoch, tau_lag)
    tau_lag = max(1, min(tau_lag, steps - 1))

    theta_dev = (theta - theta.mean(axis=0)) ** 2
    v_dev = (v - v.mean(axis=0)) ** 2
    sigma_theta2 = theta_dev.mean(axis=0)
    sigma_v2 = v_dev.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau_ratio = 2.0 * sigma_theta2 / sigma_v2

    _, se_theta = batched_means(theta_dev, batches)
    _, se_v = batched_means(v_dev, batches)
    length = steps // batches
    theta_blocks = theta_dev[: length * batches].reshape(batches, length, -1).mean(axis=1)
    v_blocks = v_dev[: length * batches].reshape(batches, length, -1).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_blocks = 2.0 * theta_blocks / v_blocks
    se_ratio = ratio_blocks.std(axis=0, ddof=1) / math.sqrt(batches)

    numerator, denominator, error = tau_sum_terms(v, tau_lag)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau_sum = numerator / denominator
    ill = np.abs(denominator) <= 2.0 * error
    if np.any(ill):
        logger.warning(
            f"{int(ill.sum())} direction(s) have a lag-sum denominator within 2 standard "
            "errors of zero; tau_sum is unreliable there"
        )
        logger.numeric("ill-conditioned tau_sum directions", float(ill.sum()))

    return EmpiricalStationary(
        sigma_theta2=sigma_theta2,
        sigma_v2=sigma_v2,
        tau_ratio=tau_ratio,
        tau_sum=tau_sum,
        se_sigma_theta2=2.0 * se_theta,
        se_sigma_v2=2.0 * se_v,
        se_tau_ratio=2.0 * se_ratio,
        tau_lag=tau_lag,
        ill_conditioned=ill,
    )


def pca_basis(trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors (columns) and eigenvalues of the empirical weight covariance, descending."""
    theta = _as_columns(trajectory.weights())
    if theta.shape[0] < 2:
        raise ValidationError("PCA needs at least two steps")
    centered = theta - theta.mean(axis=0)
    cov = centered.T @ centered / (theta.shape[0] - 1)
    values, vectors = linalg.eigh(0.5 * (cov + cov.T))
    return vectors[:, ::-1], values[::-1]


def variance_anisotropy(series) -> float:
    """max / min per-direction variance."""
    variances = _as_columns(series).var(axis=0, ddof=1)
    if np.min(variances) <= 0:
        return float("inf")
    return float(np.max(variances) / np.min(variances))


@dataclass
class PowerLawFit:
    exponent: float
    two_sigma: float
    intercept: float  # log-space intercept
    points: int

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.exponent


def powerlaw_fit(x, y, region: Optional[Sequence[float]] = None) -> PowerLawFit:
    """Least-squares line through (log x, log y) restricted to ``region``.

    Raises:
        ValidationError: Non-positive values, or fewer than three points in the region
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError("x and y must have the same length")
    mask = np.ones_like(x, dtype=bool)
    if region is not None:
        lo, hi = region
        mask &= (x >= lo) & (x <= hi)
    if np.any(x[mask] <= 0) or np.any(y[mask] <= 0):
        raise ValidationError("power-law fits need positive values")
    if mask.sum() < 3:
        raise ValidationError(f"need at least 3 points in the fit region, got {int(mask.sum())}")
    result = sps.linregress(np.log(x[mask]), np.log(y[mask]))
    return PowerLawFit(
        exponent=float(result.slope),
        two_sigma=float(2.0 * result.stderr),
        intercept=float(result.intercept),
        points=int(mask.sum()),
    )


def cosine_similarity(a, b) -> float:
    """tr(A^T B) / (|A|_F |B|_F)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ValidationError("cosine similarity of a zero matrix is undefined")
    return float(np.clip(np.sum(a * b) / (norm_a * norm_b), -1.0, 1.0))


def compare_to_theory(empirical, two_sigma, theory) -> np.ndarray:
    """Per-direction z-scores (empirical - theory) / sigma."""
    empirical = np.asarray(empirical, dtype=float)
    sigma = np.asarray(two_sigma, dtype=float) / 2.0
    diff = empirical - np.asarray(theory, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, diff / sigma, np.where(diff == 0, 0.0, np.inf))
    return z


def extract_tau_sgd(lambdas, taus, lam_cross: float, share: float = 1.0) -> float:
    """Mean correlation time over directions with lambda below ``share * lam_cross``."""
    lambdas = np.asarray(lambdas, dtype=float)
    taus = np.asarray(taus, dtype=float)
    mask = (lambdas < share * lam_cross) & np.isfinite(taus)
    if not mask.any():
        raise ValidationError("no directions below the crossover")
    return float(np.mean(taus[mask]))


def extract_lambda_cross(
    lambdas, taus, tau_plateau: float, fit_min: float, slope: Optional[float] = None
) -> float:
    """Eigenvalue where the large-lambda power-law fit of tau meets the plateau.

    With ``slope`` given only the intercept is fitted (tau ~ A lambda^slope).
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if slope is None:
        fit = powerlaw_fit(lambdas, taus, region=(fit_min, float(np.max(lambdas))))
        exponent, intercept = fit.exponent, fit.intercept
    else:
        taus = np.asarray(taus, dtype=float)
        mask = (lambdas >= fit_min) & np.isfinite(taus) & (taus > 0)
        if mask.sum() < 2:
            raise ValidationError(f"need at least 2 directions above {fit_min:g}")
        exponent = slope
        intercept = float(np.mean(np.log(taus[mask]) - slope * np.log(lambdas[mask])))
    if exponent == 0:
        raise ValidationError("flat large-lambda fit never meets the plateau")
    return float(np.exp((math.log(tau_plateau) - intercept) / exponent))
