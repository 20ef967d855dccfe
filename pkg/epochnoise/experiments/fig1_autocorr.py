"""Minibatch noise autocorrelation measured during training and at frozen weights."""

import numpy as np

from ..log_setup import get_logger
from ..model import build_commuting_ensemble
from ..plotting import Series
from ..sampling import BatchSchedule, SamplingMode, autocorr_weights
from ..sim import export_trajectory_csv, record_probe_noise, run_sgd
from ..stats import AutocorrEstimate, estimate_autocorr, fraction_within_band
from .base import (
    ExperimentContext,
    ExperimentHandler,
    burn_in_steps,
    build_hyperparams,
    build_spectrum,
    max_lag,
    run_header,
)

logger = get_logger(__name__)

COLUMNS = ("lag", "value", "band", "theory", "within_band")


def autocorr_rows(estimate: AutocorrEstimate, theory: np.ndarray) -> list[dict]:
    inside = estimate.within_band(theory)
    return [
        {
            "lag": int(lag),
            "value": float(value),
            "band": float(band),
            "theory": float(expected),
            "within_band": bool(ok),
        }
        for lag, value, band, expected, ok in zip(
            estimate.lags, estimate.values, estimate.band, theory, inside
        )
    ]


def kernel_for_lags(M: int, lags: np.ndarray) -> np.ndarray:
    """Closed-form kernel at positive lags 1..L."""
    L = int(lags[-1])
    return autocorr_weights(M, L)[L + 1 :]


class AutocorrExperiment(ExperimentHandler):
    """Noise autocorrelation of epoch sampling against the closed-form kernel."""

    name = "fig1-autocorr"
    description = "Noise autocorrelation vs lag, moving and frozen weights"
    outputs = ("autocorr.csv", "autocorr_probe.csv")

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        hp = build_hyperparams(config)
        M = hp.require_epochs()
        spectrum = build_spectrum(config, hp)
        spectrum.check_stability(hp)
        steps = config.run.steps
        lag = max_lag(config, hp)

        ensemble = build_commuting_ensemble(spectrum, hp, context.seeds.stream("ensemble"))
        schedule = BatchSchedule(
            SamplingMode.EPOCH, hp.num_examples, hp.batch_size, context.seeds.stream("schedule")
        )
        trajectory = run_sgd(
            ensemble,
            hp,
            steps,
            schedule,
            burn_in=burn_in_steps(config, hp),
            record_noise=True,
            memory_budget=config.run.memory_budget,
        )
        moving = estimate_autocorr(trajectory.noise, lag)

        theory = kernel_for_lags(M, moving.lags)
        probe = None
        if config.run.probe:
            probe_schedule = BatchSchedule(
                SamplingMode.EPOCH, hp.num_examples, hp.batch_size, context.seeds.stream("probe")
            )
            probe_noise = record_probe_noise(ensemble, probe_schedule, steps).noise
            probe = estimate_autocorr(probe_noise, lag)

        header = {
            **run_header(config, hp),
            "steps": steps,
            "ensemble_hash": ensemble.content_hash(),
        }
        context.writer.write_csv("autocorr.csv", COLUMNS, autocorr_rows(moving, theory), header)
        if config.output.trajectory:
            path = context.output_dir / "trajectory.csv"
            record = export_trajectory_csv(trajectory, path, {**context.writer.header, **header})
            context.writer.register("trajectory.csv", record)
        series = [Series("moving weights", moving.lags, moving.values, markers=True)]
        metrics = {
            "max_lag": lag,
            "fraction_within_band": fraction_within_band(moving, theory),
            "lag1_value": float(moving.values[0]),
            "lag1_theory": float(theory[0]),
        }
        if probe is not None:
            context.writer.write_csv(
                "autocorr_probe.csv",
                COLUMNS,
                autocorr_rows(probe, theory),
                {**header, "probe": True},
            )
            series.append(Series("frozen weights", probe.lags, probe.values, markers=True))
            metrics["fraction_within_band_probe"] = fraction_within_band(probe, theory)
        series.append(Series("kernel", moving.lags, theory))
        context.write_svg(
            "autocorr.svg",
            series,
            title="Noise autocorrelation",
            xlabel="lag (steps)",
            ylabel="normalized autocorrelation",
        )

        logger.run_event(
            self.name, f"{metrics['fraction_within_band']:.1%} of lags inside the 2 sigma band"
        )
        return metrics
