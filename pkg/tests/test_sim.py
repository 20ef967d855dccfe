"""Tests for the heavy-ball integrator and trajectory transforms."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from epochnoise.errors import DivergenceError, ValidationError
from epochnoise.manifest import read_csv_body
from epochnoise.model import Hyperparams, Spectrum, build_commuting_ensemble, random_orthogonal
from epochnoise.sampling import BatchSchedule, SamplingMode
from epochnoise.sim import (
    add_drift,
    default_burn_in,
    export_trajectory_csv,
    project,
    record_probe_noise,
    run_sgd,
    subtract_mean_velocity,
)
from epochnoise.stats import estimate_stationary
from epochnoise.theory import exact_stationary


def schedule_for(hp, seed=0, mode=SamplingMode.EPOCH):
    return BatchSchedule(mode, hp.num_examples, hp.batch_size, seed=seed)


@pytest.fixture
def trajectory(ensemble, hp):
    return run_sgd(
        ensemble, hp, steps=400, schedule=schedule_for(hp), burn_in=100, record_noise=True
    )


def test_default_burn_in(hp):
    assert default_burn_in(hp) == 200
    assert default_burn_in(Hyperparams.from_batches(0.01, 0.9, 100)) == 6334


def test_matches_manual_recursion(ensemble, hp):
    traj = run_sgd(ensemble, hp, steps=25, schedule=schedule_for(hp, seed=3), burn_in=0)

    schedule = schedule_for(hp, seed=3)
    theta = np.zeros(ensemble.dim)
    v = np.zeros(ensemble.dim)
    for k in range(25):
        batch = schedule.next_batch()
        grad = ensemble.hessian * theta + ensemble.example_noise[batch].mean(axis=0)
        v = hp.beta * v - hp.eta * grad
        theta = theta + v
        assert_allclose(traj.theta[k], theta, atol=1e-14)
        assert_allclose(traj.velocity[k], v, atol=1e-14)


def test_burn_in_offsets_step_indices(trajectory):
    assert trajectory.steps == 400
    assert trajectory.start_index == 101
    assert trajectory.step_indices[-1] == 500
    assert trajectory.metadata["burn_in"] == 100
    assert trajectory.metadata["schedule_mode"] == "epoch_without_replacement"


def test_recorded_noise_sums_to_zero_per_epoch(trajectory, hp):
    # burn-in of 100 steps is a whole number of epochs
    M = hp.batches_per_epoch
    epochs = trajectory.noise.reshape(-1, M, trajectory.width).sum(axis=1)
    assert_allclose(epochs, 0.0, atol=1e-12)


def test_probe_noise(ensemble, hp):
    probe = record_probe_noise(ensemble, schedule_for(hp, seed=8), steps=35)
    assert probe.noise.shape == (35, ensemble.dim)
    assert not probe.theta.any()
    M = hp.batches_per_epoch
    assert_allclose(probe.noise[: 3 * M].reshape(3, M, -1).sum(axis=1), 0.0, atol=1e-12)


def test_same_seed_same_trajectory(ensemble, hp):
    a = run_sgd(ensemble, hp, steps=50, schedule=schedule_for(hp, seed=4), burn_in=10)
    b = run_sgd(ensemble, hp, steps=50, schedule=schedule_for(hp, seed=4), burn_in=10)
    assert_array_equal(a.theta, b.theta)


def test_decays_without_noise(hp):
    spectrum = Spectrum.log_spaced(0.1, 10.0, 4, c=0.0)
    ensemble = build_commuting_ensemble(spectrum, hp, seed=0)
    traj = run_sgd(
        ensemble, hp, steps=1000, schedule=schedule_for(hp), init_theta=np.ones(4), burn_in=0
    )
    assert np.linalg.norm(traj.theta[-1]) < 0.05 * np.linalg.norm(traj.theta[0])


def test_divergence():
    hp = Hyperparams(eta=1.0, beta=0.0, batch_size=1, num_examples=4)
    ensemble = build_commuting_ensemble(Spectrum.isotropic(2, 5.0, 1.0), hp, seed=0)
    with pytest.raises(DivergenceError):
        run_sgd(
            ensemble, hp, steps=200, schedule=schedule_for(hp), init_theta=np.ones(2), burn_in=0
        )


def test_rejects_bad_arguments(ensemble, hp):
    with pytest.raises(ValidationError):
        run_sgd(ensemble, hp, steps=0, schedule=schedule_for(hp))
    other = Hyperparams(eta=hp.eta, beta=hp.beta, batch_size=4, num_examples=hp.num_examples)
    with pytest.raises(ValidationError):
        run_sgd(ensemble, hp, steps=10, schedule=schedule_for(other))
    with pytest.raises(ValidationError):
        run_sgd(ensemble, hp, steps=10, schedule=schedule_for(hp), record_basis=np.ones((6, 2)))


def test_memory_budget_records_subset():
    hp = Hyperparams(eta=0.05, beta=0.5, batch_size=2, num_examples=20)
    ensemble = build_commuting_ensemble(Spectrum.log_spaced(0.1, 10.0, 10), hp, seed=2)
    traj = run_sgd(
        ensemble, hp, steps=100, schedule=schedule_for(hp), burn_in=0, memory_budget=600
    )
    assert traj.width == 3
    assert traj.basis.shape == (10, 3)


def test_explicit_record_basis(ensemble, hp):
    basis = np.eye(ensemble.dim)[:, :2]
    full = run_sgd(ensemble, hp, steps=30, schedule=schedule_for(hp, seed=1), burn_in=0)
    part = run_sgd(
        ensemble, hp, steps=30, schedule=schedule_for(hp, seed=1), burn_in=0, record_basis=basis
    )
    assert_allclose(part.theta, full.theta[:, :2])


def test_project_preserves_total_variance(trajectory, ensemble):
    rotated = project(trajectory, random_orthogonal(ensemble.dim, seed=5))
    assert_allclose(rotated.theta.var(axis=0).sum(), trajectory.theta.var(axis=0).sum())
    assert rotated.noise.shape == trajectory.noise.shape
    with pytest.raises(ValidationError):
        project(trajectory, 2.0 * np.eye(ensemble.dim))


def test_drift_removal_undoes_added_drift(trajectory, ensemble):
    drift = np.linspace(0.1, 0.5, ensemble.dim)
    drifted = subtract_mean_velocity(add_drift(trajectory, drift))
    clean = subtract_mean_velocity(trajectory)
    assert_allclose(drifted.weights(), clean.weights(), atol=1e-9)
    assert_allclose(drifted.velocities(), clean.velocities(), atol=1e-12)
    assert_allclose(drifted.mean_velocity, clean.mean_velocity + drift)


def test_export_trajectory_csv(ensemble, hp, tmp_path):
    traj = run_sgd(ensemble, hp, steps=5, schedule=schedule_for(hp), burn_in=0, record_noise=True)
    record = export_trajectory_csv(traj, tmp_path / "trajectory.csv", header={"seed": 0})
    assert record["rows"] == 5 * ensemble.dim
    lines = read_csv_body(tmp_path / "trajectory.csv").splitlines()
    assert lines[0] == "step,direction_index,theta,v,dg"
    assert lines[1].startswith("1,0,")
    header = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert "# seed: 0" in header


def test_drift_removal_on_stationary_run(ensemble, hp):
    traj = run_sgd(ensemble, hp, steps=20000, schedule=schedule_for(hp, seed=11))
    raw = traj.theta.var(axis=0)
    shifted = subtract_mean_velocity(traj).weights().var(axis=0)
    assert np.all(shifted <= raw * (1.0 + 1e-12))
    assert np.all(shifted >= 0.85 * raw)

    drift = np.full(ensemble.dim, 0.01)
    recovered = subtract_mean_velocity(add_drift(traj, drift)).mean_velocity
    assert_allclose(recovered, drift, atol=1e-4)


def test_project_commutes_with_drift_removal(trajectory, ensemble):
    basis = random_orthogonal(ensemble.dim, seed=9)
    drifted = add_drift(trajectory, np.linspace(0.0, 0.2, ensemble.dim))
    first = subtract_mean_velocity(project(drifted, basis))
    second = project(subtract_mean_velocity(drifted), basis)
    assert_allclose(first.weights(), second.weights(), atol=1e-11)
    assert_allclose(first.velocities(), second.velocities(), atol=1e-11)
    assert_allclose(first.mean_velocity, second.mean_velocity, atol=1e-11)


def test_noiseless_geometric_decay():
    hp = Hyperparams(eta=0.1, beta=0.0, batch_size=1, num_examples=4)
    ensemble = build_commuting_ensemble(Spectrum.isotropic(1, 1.0, 0.0), hp, seed=0)
    traj = run_sgd(
        ensemble, hp, steps=50, schedule=schedule_for(hp), init_theta=np.ones(1), burn_in=0
    )
    assert_allclose(traj.theta[:, 0], 0.9 ** np.arange(1, 51), rtol=1e-12)


def test_long_run_matches_exact_stationary(ensemble, hp):
    traj = run_sgd(ensemble, hp, steps=100000, schedule=schedule_for(hp, seed=4))
    est = estimate_stationary(traj, batches_per_epoch=hp.batches_per_epoch)
    noise = ensemble.directional_noise(hp, np.eye(ensemble.dim))
    exact = np.array(
        [exact_stationary(lam, s2, hp) for lam, s2 in zip(ensemble.hessian, noise)]
    )
    # se_* are 2 sigma
    assert np.all(np.abs(est.sigma_theta2 - exact[:, 0]) <= 2.0 * est.se_sigma_theta2)
    assert np.all(np.abs(est.sigma_v2 - exact[:, 1]) <= 2.0 * est.se_sigma_v2)
