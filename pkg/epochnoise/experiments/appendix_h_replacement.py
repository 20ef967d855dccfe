"""Epoch sampling against sampling with replacement on the same ensemble."""

import numpy as np

from ..log_setup import get_logger
from ..model import build_commuting_ensemble
from ..plotting import Series
from ..sampling import BatchSchedule, SamplingMode
from ..sim import run_sgd, subtract_mean_velocity
from ..stats import estimate_autocorr, estimate_stationary, fraction_within_band
from ..theory import lambda_cross
from .base import (
    ExperimentContext,
    ExperimentHandler,
    analysis_steps,
    build_hyperparams,
    build_spectrum,
    burn_in_steps,
    exact_columns,
    max_lag,
    recorded_lambdas,
    run_header,
)
from .fig1_autocorr import kernel_for_lags

logger = get_logger(__name__)

AUTOCORR_COLUMNS = ("lag", "epoch_value", "iid_value", "band", "theory_epoch", "theory_iid")
STATIONARY_COLUMNS = (
    "direction",
    "lambda",
    "sigma_theta2_epoch",
    "sigma_theta2_iid",
    "sigma_theta2_theory_epoch",
    "sigma_theta2_theory_iid",
    "tau_epoch",
    "tau_iid",
    "tau_theory_epoch",
    "tau_theory_iid",
)


class ReplacementExperiment(ExperimentHandler):
    """Paired runs that differ only in how minibatches are drawn."""

    name = "appendix-h-replacement"
    description = "Noise autocorrelation and variances: epochs vs with replacement"
    outputs = ("replacement_autocorr.csv", "replacement_stationary.csv")

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        hp = build_hyperparams(config)
        M = hp.require_epochs()
        spectrum = build_spectrum(config, hp)
        spectrum.check_stability(hp)
        steps = analysis_steps(config, hp)
        burn_in = burn_in_steps(config, hp)
        lag = max_lag(config, hp)

        ensemble = build_commuting_ensemble(spectrum, hp, context.seeds.stream("ensemble"))
        runs = {}
        for mode in (SamplingMode.EPOCH, SamplingMode.IID):
            schedule = BatchSchedule(
                mode, hp.num_examples, hp.batch_size, context.seeds.stream(f"schedule.{mode.value}")
            )
            trajectory = run_sgd(
                ensemble,
                hp,
                steps,
                schedule,
                burn_in=burn_in,
                record_noise=True,
                memory_budget=config.run.memory_budget,
            )
            runs[mode] = subtract_mean_velocity(trajectory)

        epoch_run, iid_run = runs[SamplingMode.EPOCH], runs[SamplingMode.IID]
        epoch_acf = estimate_autocorr(epoch_run.noise, lag)
        iid_acf = estimate_autocorr(iid_run.noise, lag)
        kernel = kernel_for_lags(M, epoch_acf.lags)
        null = np.zeros_like(kernel)

        header = {**run_header(config, hp), "steps": steps, "burn_in": burn_in}
        context.writer.write_csv(
            "replacement_autocorr.csv",
            AUTOCORR_COLUMNS,
            zip(epoch_acf.lags, epoch_acf.values, iid_acf.values, epoch_acf.band, kernel, null),
            header,
        )

        basis = epoch_run.basis if epoch_run.basis is not None else np.eye(ensemble.dim)
        lambdas = recorded_lambdas(ensemble, epoch_run.basis)
        batches = config.analysis.error_batches
        tau_lag = config.analysis.tau_lag or None
        epoch_est = estimate_stationary(epoch_run, batches, tau_lag, M)
        iid_est = estimate_stationary(iid_run, batches, tau_lag, M)
        theta2_epoch, _, tau_epoch = exact_columns(
            lambdas, ensemble.directional_noise(hp, basis, "epoch"), hp
        )
        theta2_iid, _, tau_iid = exact_columns(
            lambdas, ensemble.directional_noise(hp, basis, "iid"), hp, correlated=False
        )
        context.writer.write_csv(
            "replacement_stationary.csv",
            STATIONARY_COLUMNS,
            (
                [
                    i,
                    lambdas[i],
                    epoch_est.sigma_theta2[i],
                    iid_est.sigma_theta2[i],
                    theta2_epoch[i],
                    theta2_iid[i],
                    epoch_est.tau_ratio[i],
                    iid_est.tau_ratio[i],
                    tau_epoch[i],
                    tau_iid[i],
                ]
                for i in range(lambdas.size)
            ),
            header,
        )

        context.write_svg(
            "replacement_autocorr.svg",
            [
                Series("epochs", epoch_acf.lags, epoch_acf.values, markers=True),
                Series("with replacement", iid_acf.lags, iid_acf.values, markers=True),
                Series("kernel", epoch_acf.lags, kernel),
            ],
            title="Noise autocorrelation by sampling scheme",
            xlabel="lag (steps)",
            ylabel="normalized autocorrelation",
        )

        small = lambdas < lambda_cross(hp) / 3.0
        ratio = (
            float(np.mean(iid_est.sigma_theta2[small] / epoch_est.sigma_theta2[small]))
            if small.any()
            else None
        )
        within_epoch = fraction_within_band(epoch_acf, kernel)
        within_iid = fraction_within_band(iid_acf, null)
        logger.run_event(
            self.name, f"inside band: {within_epoch:.1%} (epochs), {within_iid:.1%} (replacement)"
        )
        return {
            "fraction_within_band_epoch": within_epoch,
            "fraction_within_band_iid": within_iid,
            "small_lambda_variance_ratio_iid_over_epoch": ratio,
        }
