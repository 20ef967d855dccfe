"""Heavy-ball SGD integrator over a quadratic ensemble."""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DivergenceError, ValidationError
from .model import Hyperparams, QuadraticEnsemble
from .sampling import BatchSchedule

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e12
ORTHONORMAL_TOL = 1e-8
DEFAULT_MEMORY_BUDGET = 50_000_000


@dataclass
class Trajectory:
    """Recorded post-burn-in series, one row per step.

    Columns are coordinates in ``basis`` (None means the ensemble's own
    coordinates). Row r holds step ``start_index + r``.
    """

    theta: np.ndarray
    velocity: np.ndarray
    noise: Optional[np.ndarray] = None
    start_index: int = 1
    basis: Optional[np.ndarray] = None
    mean_velocity: Optional[np.ndarray] = None
    shifted_theta: Optional[np.ndarray] = None
    shifted_velocity: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.theta.shape[0]

    @property
    def width(self) -> int:
        """Number of recorded directions."""
        return self.theta.shape[1]

    @property
    def step_indices(self) -> np.ndarray:
        return self.start_index + np.arange(self.steps)

    def weights(self) -> np.ndarray:
        """Drift-removed weights when available, raw weights otherwise."""
        return self.shifted_theta if self.shifted_theta is not None else self.theta

    def velocities(self) -> np.ndarray:
        return self.shifted_velocity if self.shifted_velocity is not None else self.velocity


def default_burn_in(hp: Hyperparams) -> int:
    """max(20 epochs, 10 tau_SGD) steps."""
    M = hp.batches_per_epoch
    if M < 2:
        return 20 * M
    tau = M / 3.0 * (1.0 + hp.beta) / (1.0 - hp.beta)
    return max(20 * M, math.ceil(10 * tau))


def _recording_basis(
    ensemble: QuadraticEnsemble, steps: int, record_noise: bool, memory_budget: int
) -> Optional[np.ndarray]:
    series = 3 if record_noise else 2
    if ensemble.dim * steps * series <= memory_budget:
        return None
    count = max(1, memory_budget // (steps * series))
    _, vectors = ensemble.eigenbasis()
    chosen = np.unique(np.linspace(0, ensemble.dim - 1, count).round().astype(int))
    logger.warning(
        f"full recording needs {ensemble.dim * steps * series} floats (budget {memory_budget}); "
        f"recording {chosen.size} eigendirections"
    )
    return vectors[:, chosen]


def _check_basis(basis: np.ndarray, rows: int) -> np.ndarray:
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != rows:
        raise ValidationError(f"basis must have {rows} rows, got shape {basis.shape}")
    gram = basis.T @ basis
    if np.max(np.abs(gram - np.eye(gram.shape[0]))) > ORTHONORMAL_TOL:
        raise ValidationError("basis columns are not orthonormal")
    return basis


def run_sgd(
    ensemble: QuadraticEnsemble,
    hp: Hyperparams,
    steps: int,
    schedule: BatchSchedule,
    init_theta: Optional[np.ndarray] = None,
    init_v: Optional[np.ndarray] = None,
    burn_in: Optional[int] = None,
    record_noise: bool = False,
    record_basis: Optional[np.ndarray] = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> Trajectory:
    """Iterate v_k = -eta g_k + beta v_{k-1}, theta_k = theta_{k-1} + v_k.

    g_k = H theta_{k-1} + mean of eps_n over batch B_k; the recorded noise is
    dg_k = g_k - H theta_{k-1}.

    Args:
        ensemble: Quadratic loss and per-example offsets
        hp: Hyperparameters (must match the ensemble's N)
        steps: Number of recorded steps T after burn-in
        schedule: Batch index source, consumed in place
        init_theta: Starting weights (default zeros)
        init_v: Starting velocity (default zeros)
        burn_in: Discarded steps (default max(20 epochs, 10 tau_SGD))
        record_noise: Also record dg_k
        record_basis: Record projections onto these orthonormal columns
        memory_budget: Floats allowed for full-coordinate recording before switching
            to a subset of eigendirections

    Returns:
        Trajectory of the recorded steps

    Raises:
        DivergenceError: If |theta_k| exceeds 1e12 times the initial scale
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    if hp.num_examples != ensemble.num_examples:
        raise ValidationError(
            f"hyperparams N={hp.num_examples} but ensemble has {ensemble.num_examples} examples"
        )
    if schedule.num_examples != ensemble.num_examples or schedule.batch_size != hp.batch_size:
        raise ValidationError("schedule does not match the hyperparameters")
    if burn_in is None:
        burn_in = default_burn_in(hp)

    lambdas, _ = ensemble.eigenbasis()
    unstable = int(np.sum(~((hp.eta * lambdas > 0) & (hp.eta * lambdas < 2 * (1 + hp.beta)))))
    if unstable:
        logger.warning(f"{unstable} direction(s) outside the stability region; expect divergence")

    d = ensemble.dim
    theta = np.zeros(d) if init_theta is None else np.array(init_theta, dtype=float)
    v = np.zeros(d) if init_v is None else np.array(init_v, dtype=float)
    limit = DIVERGENCE_FACTOR * max(float(np.linalg.norm(theta)), 1.0)

    if record_basis is None:
        record_basis = _recording_basis(ensemble, steps, record_noise, memory_budget)
    if record_basis is not None:
        record_basis = _check_basis(record_basis, d)
    width = d if record_basis is None else record_basis.shape[1]

    thetas = np.empty((steps, width))
    velocities = np.empty((steps, width))
    noises = np.empty((steps, width)) if record_noise else None

    eta, beta = hp.eta, hp.beta
    apply_h = ensemble.apply_hessian
    total = burn_in + steps
    k = 0
    while k < total:
        block = schedule.epoch_noise(ensemble.example_noise)
        for dg in block:
            if k >= total:
                break
            v = beta * v - eta * (apply_h(theta) + dg)
            theta = theta + v
            k += 1
            row = k - burn_in - 1
            if row >= 0:
                if record_basis is None:
                    thetas[row], velocities[row] = theta, v
                    if noises is not None:
                        noises[row] = dg
                else:
                    thetas[row] = theta @ record_basis
                    velocities[row] = v @ record_basis
                    if noises is not None:
                        noises[row] = dg @ record_basis
        norm = float(np.linalg.norm(theta))
        if not np.isfinite(norm) or norm > limit:
            raise DivergenceError(f"|theta| = {norm:.3g} after {k} steps exceeds {limit:.3g}")

    metadata = {
        "eta": eta,
        "beta": beta,
        "batch_size": hp.batch_size,
        "num_examples": hp.num_examples,
        "burn_in": burn_in,
        "ensemble_hash": ensemble.content_hash(),
        **{f"schedule_{key}": value for key, value in schedule.describe().items()},
    }
    logger.debug(f"run_sgd: {total} steps ({burn_in} burn-in), width {width}")
    return Trajectory(
        theta=thetas,
        velocity=velocities,
        noise=noises,
        start_index=burn_in + 1,
        basis=record_basis,
        metadata=metadata,
    )


def record_probe_noise(
    ensemble: QuadraticEnsemble,
    schedule: BatchSchedule,
    steps: int,
    basis: Optional[np.ndarray] = None,
) -> Trajectory:
    """Record dg_k at frozen weights (eta = 0); theta and velocity stay zero."""
    if basis is not None:
        basis = _check_basis(basis, ensemble.dim)
    width = ensemble.dim if basis is None else basis.shape[1]
    noise = np.empty((steps, width))
    row = 0
    while row < steps:
        block = schedule.epoch_noise(ensemble.example_noise)
        if basis is not None:
            block = block @ basis
        take = min(block.shape[0], steps - row)
        noise[row : row + take] = block[:take]
        row += take
    return Trajectory(
        theta=np.zeros((steps, width)),
        velocity=np.zeros((steps, width)),
        noise=noise,
        start_index=1,
        basis=basis,
        metadata={"probe": True, **schedule.describe()},
    )


def project(trajectory: Trajectory, basis: np.ndarray) -> Trajectory:
    """Express every recorded series in the columns of ``basis``.

    ``basis`` is given in the trajectory's current coordinates.

    Raises:
        ValidationError: If the columns are not orthonormal within 1e-8
    """
    basis = _check_basis(basis, trajectory.width)

    def along(series):
        return None if series is None else series @ basis

    combined = basis if trajectory.basis is None else trajectory.basis @ basis
    return replace(
        trajectory,
        theta=trajectory.theta @ basis,
        velocity=trajectory.velocity @ basis,
        noise=along(trajectory.noise),
        basis=combined,
        mean_velocity=along(trajectory.mean_velocity),
        shifted_theta=along(trajectory.shifted_theta),
        shifted_velocity=along(trajectory.shifted_velocity),
        metadata=dict(trajectory.metadata),
    )


def drift_slope(theta: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Least-squares slope of each column of ``theta`` against the step index."""
    centered = np.asarray(steps, dtype=float) - np.mean(steps)
    design = np.column_stack([centered, np.ones_like(centered)])
    coef, *_ = np.linalg.lstsq(design, theta, rcond=None)
    return coef[0]


def subtract_mean_velocity(trajectory: Trajectory) -> Trajectory:
    """Fill theta_k - vbar k and v_k - vbar, with vbar the least-squares slope of theta_k on k."""
    if trajectory.steps < 2:
        raise ValidationError("drift removal needs at least two steps")
    mean_velocity = drift_slope(trajectory.theta, trajectory.step_indices)
    shifted_theta = trajectory.theta - np.outer(trajectory.step_indices, mean_velocity)
    shifted_velocity = trajectory.velocity - mean_velocity
    return replace(
        trajectory,
        mean_velocity=mean_velocity,
        shifted_theta=shifted_theta,
        shifted_velocity=shifted_velocity,
        metadata=dict(trajectory.metadata),
    )


def add_drift(trajectory: Trajectory, drift: np.ndarray) -> Trajectory:
    """Add a constant drift: theta_k + u k and v_k + u. Clears any drift removal."""
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (trajectory.width,))
    return replace(
        trajectory,
        theta=trajectory.theta + np.outer(trajectory.step_indices, drift),
        velocity=trajectory.velocity + drift,
        mean_velocity=None,
        shifted_theta=None,
        shifted_velocity=None,
        metadata={**trajectory.metadata, "drift_norm": float(np.linalg.norm(drift))},
    )


def export_trajectory_csv(trajectory: Trajectory, path: Path, header: Optional[dict] = None):
    """Long-format CSV: step, direction_index, theta, v[, dg]."""
    from .manifest import write_csv

    columns = ["step", "direction_index", "theta", "v"]
    if trajectory.noise is not None:
        columns.append("dg")

    def rows():
        for r, step in enumerate(trajectory.step_indices):
            for i in range(trajectory.width):
                row = [int(step), i, trajectory.theta[r, i], trajectory.velocity[r, i]]
                if trajectory.noise is not None:
                    row.append(trajectory.noise[r, i])
                yield row

    merged = {**trajectory.metadata, **(header or {})}
    return write_csv(path, columns, rows(), header=merged)
