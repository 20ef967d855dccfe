"""Closed-form stationary statistics of heavy-ball SGD under epoch sampling.

Every Hessian eigendirection evolves independently when the noise covariance
commutes with the Hessian. Writing y_k = (theta_k, theta_{k-1}) the recursion is

    y_k = D y_{k-1} - eta * dg_k * e1,    D = [[1 + beta - eta*lam, -beta], [1, 0]]

and the stationary variances follow from the 2x2 matrices D, E and F below.
"""

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, signal

from .errors import StabilityError, ValidationError
from .log_setup import get_logger
from .model import Hyperparams, Spectrum
from .sampling import autocorr_weights

logger = get_logger(__name__)

MIN_LAMBDA = 1e-300
EIGEN_POWER_MIN_DISCRIMINANT = 1e-6
TAIL_TOLERANCE = 1e-10
STRICT_LARGE_THRESHOLD = 10.0  # M (eta*lam)^2 must exceed this for the strict large-lambda regime

E1 = np.array([1.0, 0.0])


def check_stability(lam: float, hp: Hyperparams) -> None:
    """Raise unless 0 < eta*lam < 2(1+beta)."""
    if lam <= MIN_LAMBDA:
        raise ValidationError(f"eigenvalue {lam} too small (must exceed {MIN_LAMBDA})")
    if not hp.stable(lam):
        raise StabilityError(
            f"eta*lambda = {hp.eta * lam:.6g} outside (0, {2 * (1 + hp.beta):.6g})"
        )


def lambda_cross(hp: Hyperparams) -> float:
    """3(1-beta)/(eta M)."""
    return 3.0 * (1.0 - hp.beta) / (hp.eta * hp.require_epochs())


def tau_sgd(hp: Hyperparams) -> float:
    """(M/3)(1+beta)/(1-beta)."""
    return hp.require_epochs() / 3.0 * (1.0 + hp.beta) / (1.0 - hp.beta)


@dataclass(frozen=True)
class TransferAlgebra:
    """The 2x2 objects of one eigendirection.

    ``lag_sum`` is sum_{h=0}^{M-1} (M-1-h) D^h, evaluated by a Horner recurrence.
    The closed form (D^M + (I-D)M - I)(I-D)^{-2} is kept as a cross-check; it loses
    roughly a factor 1/(eta*lam)^2 of precision to cancellation for flat directions.
    """

    lam: float
    eta: float
    beta: float
    M: int

    @classmethod
    def for_direction(cls, lam: float, hp: Hyperparams) -> "TransferAlgebra":
        check_stability(lam, hp)
        return cls(lam=float(lam), eta=hp.eta, beta=hp.beta, M=hp.require_epochs())

    @property
    def eta_lam(self) -> float:
        return self.eta * self.lam

    @cached_property
    def D(self) -> np.ndarray:
        return np.array([[1.0 + self.beta - self.eta_lam, -self.beta], [1.0, 0.0]])

    @property
    def e1(self) -> np.ndarray:
        return E1.copy()

    @cached_property
    def s(self) -> complex:
        """sqrt((1-beta)^2 - eta*lam (2(1+beta) - eta*lam)); imaginary when underdamped."""
        b, x = self.beta, self.eta_lam
        return cmath.sqrt((1.0 - b) ** 2 - x * (2.0 * (1.0 + b) - x))

    @property
    def lambda_plus(self) -> complex:
        return 0.5 * (1.0 + self.beta - self.eta_lam + self.s)

    @property
    def lambda_minus(self) -> complex:
        return 0.5 * (1.0 + self.beta - self.eta_lam - self.s)

    @property
    def spectral_radius(self) -> float:
        return max(abs(self.lambda_plus), abs(self.lambda_minus))

    def matrix_power(self, n: int) -> np.ndarray:
        """D^n by repeated squaring in real arithmetic."""
        return np.linalg.matrix_power(self.D, n)

    def eigen_power(self, n: int) -> np.ndarray:
        """D^n through D = V diag(lambda_+, lambda_-) V^{-1}.

        Raises:
            ValidationError: Near the critically damped point where V is singular
        """
        if abs(self.s) <= EIGEN_POWER_MIN_DISCRIMINANT:
            raise ValidationError("eigendecomposition of D is ill-conditioned (|s| too small)")
        lp, lm = self.lambda_plus, self.lambda_minus
        vectors = np.array([[lp, lm], [1.0, 1.0]], dtype=complex)
        inverse = np.array([[1.0, -lm], [-1.0, lp]], dtype=complex) / (lp - lm)
        power = vectors @ np.diag([lp**n, lm**n]) @ inverse
        return power.real

    @cached_property
    def i_minus_d_inv_sq(self) -> np.ndarray:
        """(I - D)^{-2} from the adjugate, using det(I - D) = eta*lam."""
        a = np.eye(2) - self.D
        adjugate = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]])
        inverse = adjugate / self.eta_lam
        return inverse @ inverse

    @cached_property
    def lag_sum(self) -> np.ndarray:
        total = np.zeros((2, 2))
        for h in range(self.M - 1, -1, -1):
            total = total @ self.D + (self.M - 1 - h) * np.eye(2)
        return total

    @cached_property
    def closed_form_lag_sum(self) -> np.ndarray:
        d, eye = self.D, np.eye(2)
        return (self.matrix_power(self.M) + (eye - d) * self.M - eye) @ self.i_minus_d_inv_sq

    @cached_property
    def E(self) -> np.ndarray:
        """D (lag_sum) e1 e1^T / (M (M-1)): weight-noise correlation from earlier batches."""
        w = self.D @ self.lag_sum @ E1 / (self.M * (self.M - 1))
        return np.outer(w, E1)

    @cached_property
    def F(self) -> np.ndarray:
        b, x = self.beta, self.eta_lam
        prefactor = 1.0 / ((1.0 - b) * (2.0 * (1.0 + b) - x))
        return prefactor * np.array(
            [[(1.0 + b) / x, 2.0 * b * (x - 1.0 - b) / x], [2.0, 2.0 * (x - 2.0)]]
        )

    def stationary(self, sigma_dg2: float) -> tuple[float, float, float]:
        """(sigma_theta^2, sigma_v^2, tau) from eta^2 sigma^2 F [e1 - (E + E^T) e1]."""
        correction = (self.E + self.E.T) @ E1
        theta2, v2 = self.eta**2 * sigma_dg2 * (self.F @ (E1 - correction))
        return float(theta2), float(v2), float(_tau(theta2, v2))


def _tau(theta2, v2):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(np.asarray(v2) > 0, 2.0 * np.asarray(theta2) / np.asarray(v2), np.nan)


def _correlation_vector(eta_lam: np.ndarray, beta: float, M: int) -> np.ndarray:
    """w = D lag_sum e1 / (M(M-1)) for many directions at once, shape (n, 2)."""
    a = 1.0 + beta - eta_lam
    r0 = np.zeros_like(eta_lam)
    r1 = np.zeros_like(eta_lam)
    # Horner on the vector lag_sum @ e1
    for h in range(M - 1, -1, -1):
        r0, r1 = a * r0 - beta * r1 + (M - 1 - h), r0
    w0 = a * r0 - beta * r1
    w1 = r0
    return np.stack([w0, w1], axis=-1) / (M * (M - 1))


def _stationary_arrays(lams, sigma_dg2, hp: Hyperparams, correlated: bool = True):
    lams = np.asarray(lams, dtype=float)
    sigma_dg2 = np.broadcast_to(np.asarray(sigma_dg2, dtype=float), lams.shape)
    x, b = hp.eta * lams, hp.beta
    if correlated:
        w = _correlation_vector(x, b, hp.require_epochs())
        x0, x1 = 1.0 - 2.0 * w[..., 0], -w[..., 1]
    else:
        x0, x1 = np.ones_like(x), np.zeros_like(x)
    prefactor = hp.eta**2 * sigma_dg2 / ((1.0 - b) * (2.0 * (1.0 + b) - x))
    theta2 = prefactor * ((1.0 + b) * x0 + 2.0 * b * (x - 1.0 - b) * x1) / x
    v2 = prefactor * (2.0 * x0 + 2.0 * (x - 2.0) * x1)
    return theta2, v2, _tau(theta2, v2)


def _check_inputs(lam: float, sigma_dg2: float, hp: Hyperparams):
    check_stability(lam, hp)
    if sigma_dg2 < 0:
        raise ValidationError(f"noise variance must be non-negative, got {sigma_dg2}")


def exact_stationary(lam: float, sigma_dg2: float, hp: Hyperparams) -> tuple[float, float, float]:
    """Exact stationary (sigma_theta^2, sigma_v^2, tau) with epoch anti-correlations.

    Args:
        lam: Hessian eigenvalue
        sigma_dg2: Minibatch noise variance along the eigenvector
        hp: Hyperparameters (M >= 2)

    Returns:
        Weight variance, velocity variance and tau = 2 sigma_theta^2 / sigma_v^2
        (tau is nan when sigma_dg2 = 0)

    Raises:
        StabilityError: Outside 0 < eta*lam < 2(1+beta)
        DegenerateEpochError: If M < 2
    """
    _check_inputs(lam, sigma_dg2, hp)
    theta2, v2, tau = _stationary_arrays([lam], sigma_dg2, hp)
    return float(theta2[0]), float(v2[0]), float(tau[0])


def exact_stationary_uncorrelated(
    lam: float, sigma_dg2: float, hp: Hyperparams
) -> tuple[float, float, float]:
    """Stationary statistics with E = 0 (exact for sampling with replacement)."""
    _check_inputs(lam, sigma_dg2, hp)
    b, x = hp.beta, hp.eta * lam
    prefactor = hp.eta**2 * sigma_dg2 / ((1.0 - b) * (2.0 * (1.0 + b) - x))
    return prefactor * (1.0 + b) / x, 2.0 * prefactor, (1.0 + b) / x


def approx_large(lam: float, sigma_dg2: float, hp: Hyperparams) -> tuple[float, float, float]:
    """Large-eigenvalue approximation: anti-correlations negligible."""
    return exact_stationary_uncorrelated(lam, sigma_dg2, hp)


def approx_small(lam: float, sigma_dg2: float, hp: Hyperparams) -> tuple[float, float, float]:
    """Small-eigenvalue approximation: tau = tau_SGD independent of lam."""
    _check_inputs(lam, sigma_dg2, hp)
    b = hp.beta
    prefactor = hp.eta**2 * sigma_dg2 / (2.0 * (1.0 - b) * (1.0 + b))
    M = hp.require_epochs()
    return prefactor * (M / 3.0) * (1.0 + b) / (1.0 - b), 2.0 * prefactor, tau_sgd(hp)


def regime(lam: float, hp: Hyperparams) -> str:
    """Advisory tag: "small", "near-crossover" (within [lc/2, 2lc]) or "large"."""
    cross = lambda_cross(hp)
    if lam < cross / 2:
        return "small"
    if lam > 2 * cross:
        return "large"
    return "near-crossover"


def regime_predicates(lam: float, hp: Hyperparams) -> dict[str, bool]:
    """Both validity criteria for the large-eigenvalue approximation."""
    M = hp.require_epochs()
    return {
        "above_cross": lam > lambda_cross(hp),
        "strict_large": M * (hp.eta * lam) ** 2 > STRICT_LARGE_THRESHOLD,
    }


def flatness(lam):
    """lam^{-1/2}."""
    return np.asarray(lam, dtype=float) ** -0.5


def default_horizon(lam: float, hp: Hyperparams) -> int:
    """Truncation horizon for lyapunov_oracle."""
    rho = TransferAlgebra.for_direction(lam, hp).spectral_radius
    M = hp.require_epochs()
    decay = math.ceil(math.log(1e-20) / (2.0 * math.log(rho))) if rho > 0 else 1
    return max(20 * max(M, math.ceil(1.0 / (1.0 - rho))), decay) + M


def lyapunov_oracle(
    lam: float,
    sigma_dg2: float,
    hp: Hyperparams,
    horizon: Optional[int] = None,
    kernel: str = "epoch",
) -> tuple[float, float]:
    """Stationary (sigma_theta^2, sigma_v^2) by truncated summation over the noise history.

    <y y^T> = eta^2 sigma^2 sum_{i,j} u_i u_j^T w(i - j) with u_i = D^i e1 the
    impulse response of the recursion and w the normalized noise kernel. Uses no
    E or F matrices.

    Args:
        lam: Hessian eigenvalue
        sigma_dg2: Minibatch noise variance
        hp: Hyperparameters
        horizon: Number of response terms kept (default from the decay rate)
        kernel: "epoch" (anti-correlated) or "uncorrelated" (lag 0 only)
    """
    _check_inputs(lam, sigma_dg2, hp)
    if kernel not in ("epoch", "uncorrelated"):
        raise ValidationError(f"unknown kernel '{kernel}'")
    if sigma_dg2 == 0:
        return 0.0, 0.0

    M = hp.require_epochs()
    if horizon is None:
        horizon = default_horizon(lam, hp)
    max_lag = M if kernel == "epoch" else 0
    length = horizon + max_lag

    coef = 1.0 + hp.beta - hp.eta * lam
    impulse = np.zeros(length + 1)
    impulse[0] = 1.0
    response = signal.lfilter([1.0], [1.0, -coef, hp.beta], impulse)
    previous = np.concatenate([[0.0], response[:-1]])
    # Rows: u_i = (a_i, a_{i-1}) with a_{-1} = 0, then the velocity response a_i - a_{i-1}
    u = np.stack([response, previous, response - previous], axis=1)

    weights = autocorr_weights(M, max_lag)[max_lag:]
    head = u[:horizon]
    total = weights[0] * (head.T @ head)
    for h in range(1, max_lag + 1):
        cross = head.T @ u[h : horizon + h]
        total += weights[h] * (cross + cross.T)
    cov = hp.eta**2 * sigma_dg2 * total

    rho = TransferAlgebra.for_direction(lam, hp).spectral_radius
    tail = hp.eta**2 * sigma_dg2 * np.sum(u[horizon, :2] ** 2) / max(1.0 - rho**2, 1e-300)
    tail *= 1.0 + 2.0 * np.sum(np.abs(weights[1:]))
    if tail > TAIL_TOLERANCE * abs(cov[0, 0]):
        logger.warning(
            f"Lyapunov truncation tail {tail:.3g} exceeds {TAIL_TOLERANCE:g} of the result "
            f"(lam={lam:g}, horizon={horizon})"
        )

    if kernel == "uncorrelated":
        algebra = TransferAlgebra.for_direction(lam, hp)
        q = np.outer(E1, E1) * hp.eta**2 * sigma_dg2
        reference = linalg.solve_discrete_lyapunov(algebra.D, q)
        gap = abs(reference[0, 0] - cov[0, 0]) / abs(reference[0, 0])
        logger.numeric("lyapunov solver gap", gap, f"lam={lam:g}")

    theta2 = cov[0, 0]
    v2 = cov[2, 2]
    return float(theta2), float(v2)


@dataclass
class StationaryPrediction:
    """Per-direction theory for a spectrum."""

    lambdas: np.ndarray
    sigma_dg2: np.ndarray
    sigma_theta2: np.ndarray
    sigma_v2: np.ndarray
    tau: np.ndarray
    lambda_cross: float
    tau_sgd: float
    hp: Hyperparams
    regimes: list[str] = field(default_factory=list)
    sigma_theta2_large: Optional[np.ndarray] = None
    sigma_theta2_small: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.lambdas.size

    def rows(self) -> list[dict]:
        """theory-table rows."""
        M = self.hp.batches_per_epoch
        return [
            {
                "lambda": float(self.lambdas[i]),
                "sigma_dg2": float(self.sigma_dg2[i]),
                "eta": self.hp.eta,
                "beta": self.hp.beta,
                "M": M,
                "sigma_theta2_exact": float(self.sigma_theta2[i]),
                "sigma_v2_exact": float(self.sigma_v2[i]),
                "tau_exact": float(self.tau[i]),
                "sigma_theta2_large": float(self.sigma_theta2_large[i]),
                "sigma_theta2_small": float(self.sigma_theta2_small[i]),
                "regime": self.regimes[i],
            }
            for i in range(len(self))
        ]


def stationary_table(
    spectrum: Spectrum, hp: Hyperparams, correlated: bool = True
) -> StationaryPrediction:
    """Evaluate the stationary statistics for every direction of ``spectrum``."""
    spectrum.check_stability(hp)
    lams = np.array(spectrum.lambdas)
    variances = spectrum.minibatch_variances(hp)
    theta2, v2, tau = _stationary_arrays(lams, variances, hp, correlated=correlated)

    b, x, M = hp.beta, hp.eta * lams, hp.require_epochs()
    large = hp.eta**2 * variances * (1.0 + b) / ((1.0 - b) * (2.0 * (1.0 + b) - x) * x)
    small = hp.eta**2 * variances * M / (6.0 * (1.0 - b) ** 2)

    return StationaryPrediction(
        lambdas=lams,
        sigma_dg2=variances,
        sigma_theta2=theta2,
        sigma_v2=v2,
        tau=tau,
        lambda_cross=lambda_cross(hp),
        tau_sgd=tau_sgd(hp),
        hp=hp,
        regimes=[regime(lam, hp) for lam in lams],
        sigma_theta2_large=large,
        sigma_theta2_small=small,
    )


@dataclass
class LossFluctuation:
    """Expected loss excess from stationary weight fluctuations."""

    per_direction: np.ndarray  # 0.5 * lam_i * sigma_theta_i^2
    total: float
    baseline: float  # Same sum with every weight variance at the isotropic value
    ratio: float  # total / baseline


def isotropic_weight_variance(spectrum: Spectrum, hp: Hyperparams) -> np.ndarray:
    """Large-eigenvalue weight variance with eta*lam dropped against 2(1+beta).

    eta sigma_i^2 / (2 (1 - beta) lam_i), which is constant when sigma^2 = c lam.
    """
    variances = spectrum.minibatch_variances(hp)
    return hp.eta * variances / (2.0 * (1.0 - hp.beta) * spectrum.lambdas)


def loss_fluctuation(
    spectrum: Spectrum, variances: Sequence[float], hp: Optional[Hyperparams] = None
) -> LossFluctuation:
    """Sum of 0.5 lam_i sigma_theta_i^2 and its ratio to the constant-variance baseline.

    Args:
        spectrum: Eigenvalues (and noise, used for the baseline)
        variances: Weight variances sigma_theta_i^2, one per eigenvalue
        hp: When given, the baseline uses the isotropic large-eigenvalue variance;
            otherwise every direction takes the variance of the stiffest direction
    """
    variances = np.asarray(variances, dtype=float)
    if variances.shape != spectrum.lambdas.shape:
        raise ValidationError("need one weight variance per eigenvalue")
    per_direction = 0.5 * spectrum.lambdas * variances
    total = float(per_direction.sum())

    if hp is not None:
        reference = isotropic_weight_variance(spectrum, hp)
    else:
        reference = np.full_like(variances, variances[int(np.argmax(spectrum.lambdas))])
    baseline = float(np.sum(0.5 * spectrum.lambdas * reference))
    ratio = total / baseline if baseline > 0 else float("nan")
    return LossFluctuation(per_direction=per_direction, total=total, baseline=baseline, ratio=ratio)
