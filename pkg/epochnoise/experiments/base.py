"""Base classes and shared helpers for experiment handlers."""

import math
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import numpy as np

from ..config import ExperimentConfig
from ..log_setup import get_logger
from ..manifest import ArtifactWriter
from ..model import Hyperparams, QuadraticEnsemble, Spectrum
from ..plotting import Series, line_plot
from ..sampling import BatchSchedule, SamplingMode, describe_seed
from ..sim import default_burn_in, run_sgd, subtract_mean_velocity
from ..stats import EmpiricalStationary, estimate_stationary
from ..theory import exact_stationary, exact_stationary_uncorrelated, lambda_cross, tau_sgd

logger = get_logger(__name__)


class SeedStreams:
    """Named, independent RNG streams spawned from the experiment seed.

    Streams are handed out in call order, so a handler that asks for them in a
    fixed order reproduces the same streams on every run.
    """

    def __init__(self, seed: int):
        self._root = np.random.SeedSequence(seed)
        self.used: list[dict] = []

    def stream(self, name: str) -> np.random.SeedSequence:
        return self.spawn(name, 1)[0]

    def spawn(self, name: str, count: int) -> list[np.random.SeedSequence]:
        children = self._root.spawn(count)
        for i, child in enumerate(children):
            label = name if count == 1 else f"{name}[{i}]"
            self.used.append({"name": label, "seed": describe_seed(child)})
        return children


@dataclass
class ExperimentContext:
    """Context passed to experiment handlers."""

    config: ExperimentConfig
    writer: ArtifactWriter
    seeds: SeedStreams
    output_dir: Path
    metrics: dict = field(default_factory=dict)

    def write_svg(self, name: str, series: list[Series], **labels) -> None:
        """Write a plot when ``output.svg`` is enabled."""
        if self.config.output.svg:
            self.writer.write_text(name, line_plot(series, **labels))


class ExperimentHandler(ABC):
    """Base class for experiment pipelines."""

    # Experiment kind, also the CLI subcommand
    name: str = ""

    # One-line description for `enl list`
    description: str = ""

    # Files the experiment writes
    outputs: tuple[str, ...] = ()

    @abstractmethod
    def run(self, context: ExperimentContext) -> dict[str, Any]:
        """Run the pipeline and write its artifacts.

        Args:
            context: Experiment execution context

        Returns:
            Summary metrics recorded in the manifest
        """
        pass


def build_hyperparams(config: ExperimentConfig) -> Hyperparams:
    hp = config.hyperparams
    return Hyperparams(
        eta=hp.eta, beta=hp.beta, batch_size=hp.batch_size, num_examples=hp.num_examples
    )


def lambda_range(config: ExperimentConfig, hp: Hyperparams) -> tuple[float, float]:
    """Eigenvalue range: absolute overrides, else multiples of lambda_cross."""
    ens = config.ensemble
    cross = lambda_cross(hp)
    lo = ens.lambda_min if ens.lambda_min > 0 else ens.lambda_min_factor * cross
    hi = ens.lambda_max if ens.lambda_max > 0 else ens.lambda_max_factor * cross
    return lo, hi


def build_spectrum(config: ExperimentConfig, hp: Hyperparams) -> Spectrum:
    ens = config.ensemble
    if ens.spectrum == "isotropic":
        spectrum = Spectrum.isotropic(ens.dim, ens.isotropic_lambda, ens.isotropic_noise_variance)
        if ens.noise_scale != "minibatch":
            spectrum = Spectrum(spectrum.lambdas, spectrum.noise_variances, ens.noise_scale)
        return spectrum
    lo, hi = lambda_range(config, hp)
    return Spectrum.log_spaced(lo, hi, ens.dim, ens.noise_proportionality, ens.noise_scale)


def analysis_steps(config: ExperimentConfig, hp: Hyperparams) -> int:
    """run.steps, raised to tau_window_multiple * tau_SGD when that is set."""
    steps = config.run.steps
    if config.run.tau_window_multiple > 0:
        steps = max(steps, math.ceil(config.run.tau_window_multiple * tau_sgd(hp)))
    return steps


def burn_in_steps(config: ExperimentConfig, hp: Hyperparams) -> int:
    return default_burn_in(hp) if config.run.burn_in < 0 else config.run.burn_in


def max_lag(config: ExperimentConfig, hp: Hyperparams) -> int:
    return config.analysis.max_lag or 2 * hp.batches_per_epoch


def run_header(config: ExperimentConfig, hp: Hyperparams) -> dict:
    """Common CSV header fields."""
    return {
        "kind": config.experiment.kind,
        "seed": config.experiment.seed,
        "eta": hp.eta,
        "beta": hp.beta,
        "batch_size": hp.batch_size,
        "num_examples": hp.num_examples,
        "batches_per_epoch": hp.batches_per_epoch,
    }


def map_tasks(func: Callable, tasks: Iterable, workers: int = 1) -> list:
    """Apply ``func`` to every task, in order, optionally in a process pool."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(func, tasks))


def finite_or_none(value: Optional[float]):
    if value is None or not np.isfinite(value):
        return None
    return float(value)


@dataclass
class StationaryTask:
    """One simulation whose stationary statistics are estimated."""

    ensemble: QuadraticEnsemble
    hp: Hyperparams
    steps: int
    burn_in: int
    seed: np.random.SeedSequence
    batches: int = 20
    tau_lag: Optional[int] = None
    memory_budget: int = 50_000_000
    record_basis: Optional[np.ndarray] = None
    mode: SamplingMode = SamplingMode.EPOCH


@dataclass
class StationaryResult:
    estimate: EmpiricalStationary
    lambdas: np.ndarray  # Hessian eigenvalue along each recorded direction
    basis: Optional[np.ndarray]


def recorded_lambdas(ensemble: QuadraticEnsemble, basis: Optional[np.ndarray]) -> np.ndarray:
    """Rayleigh quotients p^T H p of the recorded directions."""
    if basis is None:
        if ensemble.storage == "diagonal":
            return np.array(ensemble.hessian)
        return np.diag(ensemble.hessian_matrix())
    return np.einsum("ij,ij->j", basis, ensemble.hessian_matrix() @ basis)


def simulate_stationary(task: StationaryTask) -> StationaryResult:
    """Run, remove the mean drift and estimate; top-level so process pools can pickle it."""
    schedule = BatchSchedule(task.mode, task.hp.num_examples, task.hp.batch_size, task.seed)
    trajectory = run_sgd(
        task.ensemble,
        task.hp,
        task.steps,
        schedule,
        burn_in=task.burn_in,
        record_basis=task.record_basis,
        memory_budget=task.memory_budget,
    )
    trajectory = subtract_mean_velocity(trajectory)
    estimate = estimate_stationary(
        trajectory, task.batches, task.tau_lag, task.hp.batches_per_epoch
    )
    return StationaryResult(
        estimate=estimate,
        lambdas=recorded_lambdas(task.ensemble, trajectory.basis),
        basis=trajectory.basis,
    )


def pool_replicas(estimates: list[EmpiricalStationary]) -> EmpiricalStationary:
    """Average independent replicas; 2 sigma errors shrink by sqrt(replicas)."""
    if len(estimates) == 1:
        return estimates[0]
    count = len(estimates)

    def mean(attr):
        return np.mean([getattr(e, attr) for e in estimates], axis=0)

    def pooled_error(attr):
        return np.sqrt(np.sum([getattr(e, attr) ** 2 for e in estimates], axis=0)) / count

    return EmpiricalStationary(
        sigma_theta2=mean("sigma_theta2"),
        sigma_v2=mean("sigma_v2"),
        tau_ratio=mean("tau_ratio"),
        tau_sum=mean("tau_sum"),
        se_sigma_theta2=pooled_error("se_sigma_theta2"),
        se_sigma_v2=pooled_error("se_sigma_v2"),
        se_tau_ratio=pooled_error("se_tau_ratio"),
        tau_lag=estimates[0].tau_lag,
        ill_conditioned=np.any([e.ill_conditioned for e in estimates], axis=0),
    )


def exact_columns(lambdas, variances, hp: Hyperparams, correlated: bool = True):
    """Per-direction theory arrays (sigma_theta^2, sigma_v^2, tau)."""
    predict = exact_stationary if correlated else exact_stationary_uncorrelated
    values = np.array([predict(lam, var, hp) for lam, var in zip(lambdas, variances)])
    if values.size == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    return values[:, 0], values[:, 1], values[:, 2]


def stationary_rows(
    result: StationaryResult, variances: np.ndarray, hp: Hyperparams, **extra
) -> list[dict]:
    """Rows of the stationary.csv schema."""
    est = result.estimate
    theta2, v2, tau = exact_columns(result.lambdas, variances, hp)
    rows = []
    for i, lam in enumerate(result.lambdas):
        rows.append(
            {
                **extra,
                "direction": i,
                "lambda": float(lam),
                "flatness": float(lam**-0.5),
                "sigma_dg2": float(variances[i]),
                "sigma_theta2": float(est.sigma_theta2[i]),
                "sigma_v2": float(est.sigma_v2[i]),
                "tau_ratio": float(est.tau_ratio[i]),
                "tau_sum": float(est.tau_sum[i]),
                "se_sigma_theta2": float(est.se_sigma_theta2[i]),
                "se_sigma_v2": float(est.se_sigma_v2[i]),
                "se_tau_ratio": float(est.se_tau_ratio[i]),
                "tau_sum_ill_conditioned": bool(est.ill_conditioned[i]),
                "sigma_theta2_theory": float(theta2[i]),
                "sigma_v2_theory": float(v2[i]),
                "tau_theory": float(tau[i]),
            }
        )
    return rows


STATIONARY_COLUMNS = (
    "direction",
    "lambda",
    "flatness",
    "sigma_dg2",
    "sigma_theta2",
    "sigma_v2",
    "tau_ratio",
    "tau_sum",
    "se_sigma_theta2",
    "se_sigma_v2",
    "se_tau_ratio",
    "tau_sum_ill_conditioned",
    "sigma_theta2_theory",
    "sigma_v2_theory",
    "tau_theory",
)
