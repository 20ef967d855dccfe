"""Desk-scale reproductions with their default settings.

Run with ``pytest -m slow``; each takes between a few seconds and several minutes.
"""

import numpy as np
import pytest

from epochnoise.experiments import run_experiment
from epochnoise.manifest import read_csv_body
from epochnoise.stats import extract_tau_sgd

pytestmark = pytest.mark.slow


def csv_column(path, name):
    lines = read_csv_body(path).splitlines()
    index = lines[0].split(",").index(name)
    return np.array([float(line.split(",")[index]) for line in lines[1:]])


def test_fig1_autocorrelation_follows_kernel(make_config):
    metrics = run_experiment(make_config("fig1-autocorr")).metrics
    assert metrics["max_lag"] == 200
    assert metrics["fraction_within_band"] >= 0.9
    assert metrics["fraction_within_band_probe"] >= 0.9


def test_fig2_variances(make_config):
    config = make_config("fig2-variances", experiment={"replicas": 4, "workers": 4})
    metrics = run_experiment(config).metrics
    assert metrics["within_3sigma_theta2"] >= 0.9
    assert metrics["within_3sigma_v2"] >= 0.9
    assert 0.9 <= metrics["exponent_sigma_theta2_small"] <= 1.1
    assert 0.9 <= metrics["exponent_sigma_v2_small"] <= 1.1

    path = f"{config.experiment.output_dir}/fig2-variances/stationary.csv"
    lambdas = csv_column(path, "lambda")
    empirical, theory = csv_column(path, "tau_ratio"), csv_column(path, "tau_theory")
    cross = metrics["lambda_cross"]
    plateau = extract_tau_sgd(lambdas, empirical, cross, share=0.1)
    assert plateau == pytest.approx(100 / 3 * 1.9 / 0.1, rel=0.1)
    large = lambdas >= 3.0 * cross
    assert large.sum() > 10
    assert np.all(np.abs(empirical[large] / theory[large] - 1.0) <= 0.15)


def test_replacement_removes_anticorrelation(make_config):
    metrics = run_experiment(make_config("appendix-h-replacement")).metrics
    assert metrics["fraction_within_band_epoch"] >= 0.9
    assert metrics["fraction_within_band_iid"] >= 0.9
    assert metrics["small_lambda_variance_ratio_iid_over_epoch"] > 2.0


def test_sweep_recovers_closed_forms(make_config):
    config = make_config("appendix-i-sweep", experiment={"workers": 2})
    metrics = run_experiment(config).metrics
    assert metrics["grid_points"] == 9
    assert metrics["comparable_points"] == 7
    assert metrics["failed_lambda_extractions"] == 0
    # against (M/3)(1+beta)/(1-beta) and 3(1-beta)/(eta M) where M(1-beta) >= 20
    assert metrics["max_tau_rel_error"] <= 0.15
    assert metrics["max_lambda_rel_error"] <= 0.25
    assert metrics["max_tau_rel_error_theory"] <= 0.15
    assert metrics["max_lambda_rel_error_theory"] <= 0.25


def test_noncommuting_tau_still_tracks_theory(make_config):
    metrics = run_experiment(make_config("appendix-n-noncommuting")).metrics
    assert metrics["perturbed_cosine"] > 0.9
    assert metrics["random_cosine"] < metrics["perturbed_cosine"]
    assert metrics["perturbed_tau_within_factor"] >= 0.9
    assert metrics["random_tau_within_factor"] >= 0.9
