"""PCA of a weight trajectory manufactures anisotropy that the loss does not have."""

import numpy as np

from ..log_setup import get_logger
from ..model import build_commuting_ensemble, make_rng
from ..plotting import Series
from ..sampling import BatchSchedule, SamplingMode
from ..sim import add_drift, project, run_sgd
from ..stats import estimate_stationary, pca_basis, variance_anisotropy
from .base import (
    ExperimentContext,
    ExperimentHandler,
    build_hyperparams,
    build_spectrum,
    burn_in_steps,
    run_header,
)

logger = get_logger(__name__)

PCA_COLUMNS = ("rank", "explained_variance", "tau", "explained_variance_drift", "cos_to_drift")
BASIS_COLUMNS = ("basis", "variance_max_min_ratio", "tau_max_min_ratio")


def _spread(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values) & (values > 0)]
    return float(finite.max() / finite.min()) if finite.size else float("nan")


def random_direction(dim: int, seed) -> np.ndarray:
    u = make_rng(seed).standard_normal(dim)
    return u / np.linalg.norm(u)


class PcaExperiment(ExperimentHandler):
    """Compare variance and tau spreads in the original and PCA bases."""

    name = "appendix-f-pca"
    description = "PCA-basis anisotropy of an isotropic problem, with and without drift"
    outputs = ("pca.csv", "basis_comparison.csv")

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        hp = build_hyperparams(config)
        spectrum = build_spectrum(config, hp)
        spectrum.check_stability(hp)
        steps = config.run.steps
        burn_in = burn_in_steps(config, hp)

        ensemble = build_commuting_ensemble(spectrum, hp, context.seeds.stream("ensemble"))
        schedule = BatchSchedule(
            SamplingMode.EPOCH, hp.num_examples, hp.batch_size, context.seeds.stream("schedule")
        )
        trajectory = run_sgd(ensemble, hp, steps, schedule, burn_in=burn_in)

        vectors, values = pca_basis(trajectory)
        in_pca = project(trajectory, vectors)
        original_est = estimate_stationary(trajectory, config.analysis.error_batches)
        pca_est = estimate_stationary(in_pca, config.analysis.error_batches)

        drift = random_direction(ensemble.dim, context.seeds.stream("drift"))
        speed = config.run.drift
        if speed > 0:
            drifted = add_drift(trajectory, speed * drift)
            drift_vectors, drift_values = pca_basis(drifted)
            cosines = np.abs(drift_vectors.T @ drift)
        else:
            drift_values = np.full_like(values, np.nan)
            cosines = np.full_like(values, np.nan)

        rows = [
            {
                "rank": rank + 1,
                "explained_variance": float(values[rank]),
                "tau": float(pca_est.tau_ratio[rank]),
                "explained_variance_drift": float(drift_values[rank]),
                "cos_to_drift": float(cosines[rank]),
            }
            for rank in range(values.size)
        ]
        header = {**run_header(config, hp), "steps": steps, "burn_in": burn_in, "drift": speed}
        context.writer.write_csv("pca.csv", PCA_COLUMNS, rows, header)

        original_ratio = variance_anisotropy(trajectory.theta)
        pca_ratio = variance_anisotropy(in_pca.theta)
        comparison = [
            {
                "basis": "original",
                "variance_max_min_ratio": original_ratio,
                "tau_max_min_ratio": _spread(original_est.tau_ratio),
            },
            {
                "basis": "pca",
                "variance_max_min_ratio": pca_ratio,
                "tau_max_min_ratio": _spread(pca_est.tau_ratio),
            },
        ]
        context.writer.write_csv("basis_comparison.csv", BASIS_COLUMNS, comparison, header)

        ranks = np.arange(1, values.size + 1)
        context.write_svg(
            "pca.svg",
            [Series("PCA variance", ranks, values, markers=True)],
            title="Explained variance by rank",
            xlabel="rank",
            ylabel="variance",
            log_y=True,
        )

        logger.run_event(
            self.name, f"variance spread {original_ratio:.3g} (original) vs {pca_ratio:.3g} (PCA)"
        )
        return {
            "original_variance_ratio": original_ratio,
            "pca_variance_ratio": pca_ratio,
            "original_tau_ratio": _spread(original_est.tau_ratio),
            "pca_tau_ratio": _spread(pca_est.tau_ratio),
            "drift_cosine": float(cosines[0]) if speed > 0 else None,
            "drift_explained_fraction": (
                float(drift_values[0] / drift_values.sum()) if speed > 0 else None
            ),
        }
