"""Sweep momentum and epoch length; extract tau_SGD and lambda_cross from simulations."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..log_setup import get_logger
from ..model import Hyperparams, Spectrum, build_commuting_ensemble
from ..plotting import Series
from ..sim import default_burn_in
from ..stats import extract_lambda_cross, extract_tau_sgd
from ..theory import lambda_cross, tau_sgd
from .base import (
    ExperimentContext,
    ExperimentHandler,
    StationaryTask,
    exact_columns,
    finite_or_none,
    map_tasks,
    simulate_stationary,
)

logger = get_logger(__name__)

SWEEP_COLUMNS = (
    "beta",
    "M",
    "eta",
    "steps",
    "tau_sgd_closed",
    "tau_sgd_theory",
    "tau_sgd_empirical",
    "tau_rel_error",
    "tau_rel_error_theory",
    "lambda_cross_closed",
    "lambda_cross_theory",
    "lambda_cross_empirical",
    "lambda_rel_error",
    "lambda_rel_error_theory",
    "closed_form_comparable",
)
TAU_COLUMNS = ("beta", "M", "lambda", "tau_empirical", "se_tau", "tau_theory")

# Closed forms are only expected to hold once the epoch is long against the momentum time
CLOSED_FORM_MIN_EPOCH = 20
# Plateau directions: lambda below this share of lambda_cross
PLATEAU_SHARE = 0.1
# Large-lambda asymptote tau ~ (1+beta)/(eta lambda)
ASYMPTOTIC_SLOPE = -1.0


@dataclass
class SweepPoint:
    eta: float
    beta: float
    M: int
    batch_size: int
    dim: int
    lambda_min_factor: float
    lambda_max_factor: float
    noise_proportionality: float
    steps: int
    window_multiple: float
    fit_min_factor: float
    batches: int
    memory_budget: int
    seed: np.random.SeedSequence


def _extract(lambdas, taus, cross: float, fit_min: float) -> tuple[float, float]:
    plateau = extract_tau_sgd(lambdas, taus, cross, share=PLATEAU_SHARE)
    try:
        crossing = extract_lambda_cross(lambdas, taus, plateau, fit_min, slope=ASYMPTOTIC_SLOPE)
    except ValidationError as e:
        logger.warning(f"lambda_cross extraction failed: {e}")
        crossing = float("nan")
    return plateau, crossing


def _relative(value: float, reference: float) -> float:
    if not (math.isfinite(value) and math.isfinite(reference)) or reference == 0:
        return float("nan")
    return abs(value - reference) / abs(reference)


def sweep_point(point: SweepPoint) -> tuple[dict, list[dict]]:
    """Simulate one (beta, M) grid point and extract both scales."""
    hp = Hyperparams.from_batches(point.eta, point.beta, point.M, point.batch_size)
    cross = lambda_cross(hp)
    spectrum = Spectrum.log_spaced(
        point.lambda_min_factor * cross,
        point.lambda_max_factor * cross,
        point.dim,
        point.noise_proportionality,
    )
    spectrum.check_stability(hp)
    steps = max(point.steps, math.ceil(point.window_multiple * tau_sgd(hp)))
    ensemble_seed, schedule_seed = point.seed.spawn(2)
    ensemble = build_commuting_ensemble(spectrum, hp, ensemble_seed)
    result = simulate_stationary(
        StationaryTask(
            ensemble=ensemble,
            hp=hp,
            steps=steps,
            burn_in=default_burn_in(hp),
            seed=schedule_seed,
            batches=point.batches,
            memory_budget=point.memory_budget,
        )
    )
    lambdas = result.lambdas
    basis = result.basis if result.basis is not None else np.eye(ensemble.dim)
    _, _, tau_theory = exact_columns(lambdas, ensemble.directional_noise(hp, basis), hp)
    taus = result.estimate.tau_ratio

    fit_min = point.fit_min_factor * cross
    theory_tau, theory_cross = _extract(lambdas, tau_theory, cross, fit_min)
    empirical_tau, empirical_cross = _extract(lambdas, taus, cross, fit_min)

    row = {
        "beta": point.beta,
        "M": point.M,
        "eta": point.eta,
        "steps": steps,
        "tau_sgd_closed": tau_sgd(hp),
        "tau_sgd_theory": theory_tau,
        "tau_sgd_empirical": empirical_tau,
        "tau_rel_error": _relative(empirical_tau, tau_sgd(hp)),
        "tau_rel_error_theory": _relative(empirical_tau, theory_tau),
        "lambda_cross_closed": cross,
        "lambda_cross_theory": theory_cross,
        "lambda_cross_empirical": empirical_cross,
        "lambda_rel_error": _relative(empirical_cross, cross),
        "lambda_rel_error_theory": _relative(empirical_cross, theory_cross),
        "closed_form_comparable": point.M * (1.0 - point.beta) >= CLOSED_FORM_MIN_EPOCH,
    }
    curve = [
        {
            "beta": point.beta,
            "M": point.M,
            "lambda": float(lam),
            "tau_empirical": float(taus[i]),
            "se_tau": float(result.estimate.se_tau_ratio[i]),
            "tau_theory": float(tau_theory[i]),
        }
        for i, lam in enumerate(lambdas)
    ]
    return row, curve


class SweepExperiment(ExperimentHandler):
    """Momentum / epoch-length grid."""

    name = "appendix-i-sweep"
    description = "Extracted tau_SGD and lambda_cross over a (beta, M) grid"
    outputs = ("sweep.csv", "sweep_taus.csv")

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        sweep = config.sweep
        grid = [(beta, M) for beta in sweep.betas for M in sweep.batches_per_epoch]
        seeds = context.seeds.spawn("grid", len(grid))
        points = [
            SweepPoint(
                eta=config.hyperparams.eta,
                beta=beta,
                M=M,
                batch_size=config.hyperparams.batch_size,
                dim=config.ensemble.dim,
                lambda_min_factor=config.ensemble.lambda_min_factor,
                lambda_max_factor=config.ensemble.lambda_max_factor,
                noise_proportionality=config.ensemble.noise_proportionality,
                steps=config.run.steps,
                window_multiple=config.run.tau_window_multiple,
                fit_min_factor=config.analysis.large_fit_min_factor,
                batches=config.analysis.error_batches,
                memory_budget=config.run.memory_budget,
                seed=seed,
            )
            for (beta, M), seed in zip(grid, seeds)
        ]
        logger.run_event(
            self.name, f"{len(points)} grid points on {config.experiment.workers} worker(s)"
        )
        results = map_tasks(sweep_point, points, config.experiment.workers)
        rows = [row for row, _ in results]
        curves = [entry for _, curve in results for entry in curve]

        header = {
            "kind": self.name,
            "seed": config.experiment.seed,
            "eta": config.hyperparams.eta,
            "batch_size": config.hyperparams.batch_size,
        }
        context.writer.write_csv("sweep.csv", SWEEP_COLUMNS, rows, header)
        context.writer.write_csv("sweep_taus.csv", TAU_COLUMNS, curves, header)

        closed = [r["tau_sgd_closed"] for r in rows]
        context.write_svg(
            "sweep.svg",
            [
                Series("closed form", closed, closed),
                Series("theory", closed, [r["tau_sgd_theory"] for r in rows], markers=True),
                Series("simulated", closed, [r["tau_sgd_empirical"] for r in rows], markers=True),
            ],
            title="Extracted tau_SGD",
            xlabel="(M/3)(1+beta)/(1-beta)",
            ylabel="extracted",
            log_x=True,
            log_y=True,
        )

        def worst(key, only_comparable=False):
            errors = [
                r[key]
                for r in rows
                if math.isfinite(r[key]) and (r["closed_form_comparable"] or not only_comparable)
            ]
            return finite_or_none(max(errors, default=float("nan")))

        failed = sum(1 for r in rows if not math.isfinite(r["lambda_cross_empirical"]))
        return {
            "grid_points": len(rows),
            "comparable_points": sum(1 for r in rows if r["closed_form_comparable"]),
            "max_tau_rel_error": worst("tau_rel_error", only_comparable=True),
            "max_lambda_rel_error": worst("lambda_rel_error", only_comparable=True),
            "max_tau_rel_error_theory": worst("tau_rel_error_theory"),
            "max_lambda_rel_error_theory": worst("lambda_rel_error_theory"),
            "failed_lambda_extractions": failed,
        }
