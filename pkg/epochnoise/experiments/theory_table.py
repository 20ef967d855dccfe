"""Exact and approximate stationary statistics for a spectrum, no simulation."""

import numpy as np

from ..plotting import Series
from ..theory import regime_predicates, stationary_table
from .base import (
    ExperimentContext,
    ExperimentHandler,
    build_hyperparams,
    build_spectrum,
    run_header,
)

COLUMNS = (
    "lambda",
    "sigma_dg2",
    "eta",
    "beta",
    "M",
    "sigma_theta2_exact",
    "sigma_v2_exact",
    "tau_exact",
    "sigma_theta2_large",
    "sigma_theta2_small",
    "regime",
)


class TheoryTableExperiment(ExperimentHandler):
    """Tabulate the stationary variances over a log-spaced spectrum."""

    name = "theory-table"
    description = "Exact vs small/large-eigenvalue stationary variances"
    outputs = ("theory_table.csv",)

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        hp = build_hyperparams(config)
        spectrum = build_spectrum(config, hp)
        prediction = stationary_table(spectrum, hp)

        context.writer.write_csv(
            "theory_table.csv", COLUMNS, prediction.rows(), header=run_header(config, hp)
        )

        strict = np.array([regime_predicates(lam, hp)["strict_large"] for lam in spectrum.lambdas])
        context.write_svg(
            "theory_table.svg",
            [
                Series("exact", spectrum.lambdas, prediction.sigma_theta2),
                Series("large-lambda", spectrum.lambdas, prediction.sigma_theta2_large),
                Series("small-lambda", spectrum.lambdas, prediction.sigma_theta2_small),
            ],
            title="Stationary weight variance",
            xlabel="lambda",
            ylabel="sigma_theta^2",
            log_x=True,
            log_y=True,
        )

        return {
            "directions": len(prediction),
            "lambda_cross": prediction.lambda_cross,
            "tau_sgd": prediction.tau_sgd,
            "strict_large_directions": int(strict.sum()),
            "below_cross_fraction": float(np.mean(spectrum.lambdas < prediction.lambda_cross)),
        }
