"""Per-direction theory on ensembles whose noise does not commute with the Hessian."""

import numpy as np

from ..errors import ValidationError
from ..log_setup import get_logger
from ..model import build_noncommuting_ensemble, random_psd, wishart_perturbation
from ..plotting import Series
from ..stats import powerlaw_fit
from .base import (
    ExperimentContext,
    ExperimentHandler,
    StationaryTask,
    analysis_steps,
    build_hyperparams,
    build_spectrum,
    burn_in_steps,
    exact_columns,
    map_tasks,
    run_header,
    simulate_stationary,
)

logger = get_logger(__name__)

COLUMNS = (
    "mode",
    "direction",
    "lambda",
    "directional_noise",
    "sigma_theta2",
    "sigma_v2",
    "tau_ratio",
    "tau_sum",
    "se_tau_ratio",
    "sigma_theta2_theory",
    "tau_theory",
)
SUMMARY_COLUMNS = ("mode", "cosine_to_hessian", "exact_match", "tau_within_factor", "exponent")

TAU_FACTOR = 1.5
# Directions whose tau exceeds this share of the window are too poorly sampled to score
TAU_WINDOW_SHARE = 1.0 / 20.0


def noise_target(mode: str, hessian: np.ndarray, c: float, std: float, seed):
    """Minibatch noise covariance C for one mode.

    "perturbed": c (H + (1/d) X X^T). "random": an independent Wishart matrix
    (1/d) X X^T rescaled to the trace of c H.
    """
    if mode == "perturbed":
        return c * (hessian + wishart_perturbation(hessian.shape[0], std, seed))
    if mode == "random":
        sample = wishart_perturbation(hessian.shape[0], 1.0, seed)
        return c * sample * (np.trace(hessian) / np.trace(sample))
    raise ValidationError(f"unknown noncommuting mode '{mode}'")


class NoncommutingExperiment(ExperimentHandler):
    """Simulated tau along Hessian eigenvectors against the single-direction theory."""

    name = "appendix-n-noncommuting"
    description = "Theory applied per eigendirection when C does not commute with H"
    outputs = ("noncommuting.csv", "noncommuting_summary.csv")

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        ens = config.ensemble
        hp = build_hyperparams(config)
        spectrum = build_spectrum(config, hp)
        spectrum.check_stability(hp)
        steps = analysis_steps(config, hp)
        burn_in = burn_in_steps(config, hp)
        modes = (
            ("perturbed", "random") if ens.noncommuting_mode == "both" else (ens.noncommuting_mode,)
        )

        hessian = random_psd(spectrum.lambdas, context.seeds.stream("hessian"))
        ensembles = {}
        for mode in modes:
            target = noise_target(
                mode,
                hessian,
                ens.noise_proportionality,
                ens.perturbation_std,
                context.seeds.stream(f"noise.{mode}"),
            )
            ensembles[mode] = build_noncommuting_ensemble(
                hessian,
                target / hp.noise_factor,
                hp.num_examples,
                context.seeds.stream(f"examples.{mode}"),
            )
            logger.numeric("cosine(C, H)", ensembles[mode].cosine_to_hessian, f"{mode} ensemble")

        tasks = [
            StationaryTask(
                ensemble=ensembles[mode],
                hp=hp,
                steps=steps,
                burn_in=burn_in,
                seed=context.seeds.stream(f"schedule.{mode}"),
                batches=config.analysis.error_batches,
                tau_lag=config.analysis.tau_lag or None,
                memory_budget=config.run.memory_budget,
                record_basis=ensembles[mode].basis,
            )
            for mode in modes
        ]
        results = map_tasks(simulate_stationary, tasks, config.experiment.workers)

        rows, summary, metrics, series = [], [], {}, []
        for mode, result in zip(modes, results):
            ensemble = ensembles[mode]
            est = result.estimate
            variances = ensemble.directional_noise(hp, result.basis)
            theta2, _, tau = exact_columns(result.lambdas, variances, hp)
            for i, lam in enumerate(result.lambdas):
                rows.append(
                    [
                        mode,
                        i,
                        lam,
                        variances[i],
                        est.sigma_theta2[i],
                        est.sigma_v2[i],
                        est.tau_ratio[i],
                        est.tau_sum[i],
                        est.se_tau_ratio[i],
                        theta2[i],
                        tau[i],
                    ]
                )

            scored = tau <= TAU_WINDOW_SHARE * steps
            ratio = est.tau_ratio[scored] / tau[scored]
            within = float(np.mean((ratio <= TAU_FACTOR) & (ratio >= 1.0 / TAU_FACTOR)))
            try:
                exponent = powerlaw_fit(result.lambdas, est.sigma_theta2).exponent
            except ValidationError as e:
                logger.warning(f"variance fit failed for the {mode} ensemble: {e}")
                exponent = float("nan")
            summary.append(
                {
                    "mode": mode,
                    "cosine_to_hessian": ensemble.cosine_to_hessian,
                    "exact_match": ensemble.exact_match,
                    "tau_within_factor": within,
                    "exponent": exponent,
                }
            )
            metrics[f"{mode}_cosine"] = ensemble.cosine_to_hessian
            metrics[f"{mode}_tau_within_factor"] = within
            metrics[f"{mode}_variance_exponent"] = exponent
            series.append(Series(f"{mode} simulated", result.lambdas, est.tau_ratio, markers=True))
            series.append(Series(f"{mode} theory", result.lambdas, tau))

        header = {**run_header(config, hp), "steps": steps, "burn_in": burn_in}
        context.writer.write_csv("noncommuting.csv", COLUMNS, rows, header)
        context.writer.write_csv("noncommuting_summary.csv", SUMMARY_COLUMNS, summary, header)
        context.write_svg(
            "noncommuting.svg",
            series,
            title="tau along Hessian eigenvectors",
            xlabel="lambda",
            ylabel="tau",
            log_x=True,
            log_y=True,
        )
        return metrics
