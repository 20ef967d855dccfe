"""Tests for minibatch schedules, the lag kernel and the combinatorial oracle."""

from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from epochnoise.errors import DegenerateEpochError, OracleSizeError, ValidationError
from epochnoise.model import Hyperparams
from epochnoise.sampling import (
    BatchSchedule,
    SamplingMode,
    autocorr_weight,
    autocorr_weights,
    indicator_covariance_oracle,
    noise_autocorr_oracle,
    noise_scale_oracle,
    pair_probability_oracle,
)


class TestBatchSchedule:
    def test_epoch_covers_every_example_once(self):
        schedule = BatchSchedule(SamplingMode.EPOCH, num_examples=10, batch_size=3, seed=5)
        assert len(schedule) == 4
        for _ in range(3):
            batches = [schedule.next_batch() for _ in range(len(schedule))]
            assert [b.size for b in batches] == [3, 3, 3, 1]
            assert_array_equal(np.sort(np.concatenate(batches)), np.arange(10))

    def test_iid_batches_allow_any_index(self):
        schedule = BatchSchedule("iid_with_replacement", num_examples=5, batch_size=4, seed=5)
        batches = np.array([next(schedule) for _ in range(50)])
        assert batches.shape == (50, 4)
        assert batches.min() >= 0 and batches.max() < 5
        assert schedule.mode is SamplingMode.IID

    def test_same_seed_same_batches(self):
        a = BatchSchedule(SamplingMode.EPOCH, 12, 4, seed=np.random.SeedSequence(3))
        b = BatchSchedule(SamplingMode.EPOCH, 12, 4, seed=np.random.SeedSequence(3))
        for _ in range(9):
            assert_array_equal(a.next_batch(), b.next_batch())
        assert a.steps_taken == 9
        assert a.epochs_started == 3

    def test_epoch_noise_sums_to_zero(self, ensemble, hp):
        schedule = BatchSchedule(SamplingMode.EPOCH, hp.num_examples, hp.batch_size, seed=9)
        block = schedule.epoch_noise(ensemble.example_noise)
        assert block.shape == (hp.batches_per_epoch, ensemble.dim)
        assert_allclose(block.sum(axis=0), 0.0, atol=1e-12)

    def test_rejects_oversized_batch(self):
        with pytest.raises(ValidationError):
            BatchSchedule(SamplingMode.EPOCH, num_examples=3, batch_size=4, seed=0)

    def test_describe(self):
        schedule = BatchSchedule(SamplingMode.EPOCH, 8, 2, seed=11)
        assert schedule.describe() == {
            "mode": "epoch_without_replacement",
            "num_examples": 8,
            "batch_size": 2,
            "seed": "11",
        }


class TestKernel:
    def test_values(self):
        assert autocorr_weight(0, 5) == 1.0
        assert autocorr_weight(1, 5, exact=True) == Fraction(-1, 5)
        assert autocorr_weight(-4, 5, exact=True) == Fraction(-1, 20)
        assert autocorr_weight(5, 5) == 0.0
        assert autocorr_weight(9, 5) == 0.0

    @pytest.mark.parametrize("M", [2, 3, 10, 100])
    def test_kernel_sums_to_zero(self, M):
        assert_allclose(autocorr_weights(M, M + 3).sum(), 0.0, atol=1e-12)

    def test_vector_matches_scalar(self):
        weights = autocorr_weights(7, 10)
        for h in range(-10, 11):
            assert weights[h + 10] == pytest.approx(autocorr_weight(h, 7))

    def test_degenerate_epoch(self):
        with pytest.raises(DegenerateEpochError):
            autocorr_weight(1, 1)
        with pytest.raises(DegenerateEpochError):
            autocorr_weights(1, 3)


class TestOracle:
    @pytest.mark.parametrize("N,S", [(4, 1), (4, 2), (6, 1), (6, 2), (6, 3), (8, 4), (12, 3)])
    def test_kernel_matches_enumeration(self, N, S):
        M = N // S
        for h in range(0, 2 * M + 1):
            assert noise_autocorr_oracle(N, S, h) == autocorr_weight(h, M, exact=True)

    def test_hand_computed_case(self):
        # N=4, S=2: lag-1 indicator covariances averaged over both batch offsets
        same, diff = indicator_covariance_oracle(4, 2, 1)
        assert same == Fraction(-1, 8)
        assert diff == Fraction(1, 24)
        assert noise_autocorr_oracle(4, 2, 1) == Fraction(-1, 2)

    @pytest.mark.parametrize("same_example", [True, False])
    @pytest.mark.parametrize("position", [0, 1, 2])
    def test_brute_force_agrees(self, same_example, position):
        for h in range(0, 7):
            fast = pair_probability_oracle(6, 2, h, same_example, position=position)
            slow = pair_probability_oracle(
                6, 2, h, same_example, position=position, brute_force=True
            )
            assert fast == slow

    @pytest.mark.parametrize("N,S", [(6, 1), (6, 2), (6, 3), (12, 4)])
    def test_noise_scale(self, N, S):
        oracle = noise_scale_oracle(N, S)
        assert oracle == Fraction(N - S, N * S)
        assert float(oracle) == pytest.approx(Hyperparams(1.0, 0.0, S, N).noise_factor)

    def test_limits(self):
        with pytest.raises(OracleSizeError):
            pair_probability_oracle(13, 1, 0, True)
        with pytest.raises(OracleSizeError):
            pair_probability_oracle(10, 2, 0, True, brute_force=True)
        with pytest.raises(ValidationError):
            pair_probability_oracle(6, 4, 0, True)
        with pytest.raises(ValidationError):
            pair_probability_oracle(6, 2, 7, True)
