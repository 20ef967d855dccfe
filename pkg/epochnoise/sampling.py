"""Minibatch index schedules and the exact combinatorial noise-correlation oracle."""

import itertools
import logging
import math
from enum import Enum
from fractions import Fraction
from typing import Iterator, Optional, Union

import numpy as np

from .errors import DegenerateEpochError, OracleSizeError, ValidationError
from .model import SeedLike, make_rng

logger = logging.getLogger(__name__)

ORACLE_MAX_EXAMPLES = 12
BRUTE_FORCE_MAX_EXAMPLES = 8


class SamplingMode(str, Enum):
    """How minibatch indices are drawn."""

    EPOCH = "epoch_without_replacement"
    IID = "iid_with_replacement"


class BatchSchedule:
    """Stateful iterator over minibatch index arrays (0-based).

    In epoch mode a fresh uniform permutation of the N examples is cut into
    consecutive chunks of S at every epoch boundary; when S does not divide N the
    last chunk of each epoch is smaller. In iid mode every batch is S independent
    uniform draws, duplicates allowed.

    A schedule is single-consumer: one simulation owns it.
    """

    def __init__(
        self,
        mode: Union[SamplingMode, str],
        num_examples: int,
        batch_size: int,
        seed: SeedLike,
    ):
        self.mode = SamplingMode(mode)
        if batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
        if batch_size > num_examples:
            raise ValidationError(
                f"batch_size {batch_size} exceeds num_examples {num_examples}"
            )
        self.num_examples = num_examples
        self.batch_size = batch_size
        self.seed = seed
        self._rng = make_rng(seed)
        self._pending: list[np.ndarray] = []
        self.steps_taken = 0
        self.epochs_started = 0

    def __len__(self) -> int:
        """Batches per epoch."""
        return math.ceil(self.num_examples / self.batch_size)

    def __iter__(self) -> Iterator[np.ndarray]:
        return self

    def __next__(self) -> np.ndarray:
        return self.next_batch()

    def _refill(self):
        n, s = self.num_examples, self.batch_size
        if self.mode is SamplingMode.EPOCH:
            perm = self._rng.permutation(n)
            self._pending = [perm[i : i + s] for i in range(0, n, s)]
        else:
            draws = self._rng.integers(0, n, size=(len(self), s))
            self._pending = list(draws)
        self._pending.reverse()
        self.epochs_started += 1

    def next_batch(self) -> np.ndarray:
        """Return the next index array B_k and advance."""
        if not self._pending:
            self._refill()
        self.steps_taken += 1
        return self._pending.pop()

    def epoch_noise(self, example_noise: np.ndarray) -> np.ndarray:
        """Minibatch noise (one row per batch) for the next ``len(self)`` batches.

        Each row is the mean of ``example_noise`` over that batch's indices, which is
        delta g_k because the offsets sum to zero.
        """
        batches = [self.next_batch() for _ in range(len(self))]
        return np.stack([example_noise[b].mean(axis=0) for b in batches])

    def describe(self) -> dict:
        """(mode, N, S, seed) for file headers."""
        return {
            "mode": self.mode.value,
            "num_examples": self.num_examples,
            "batch_size": self.batch_size,
            "seed": describe_seed(self.seed),
        }


def describe_seed(seed: SeedLike) -> str:
    """Printable identity of an integer seed or a spawned SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        key = "/".join(str(k) for k in seed.spawn_key)
        return f"{seed.entropy}:{key}" if key else str(seed.entropy)
    return str(seed)


# Lag kernel


def autocorr_weight(h: int, M: int, exact: bool = False) -> Union[float, Fraction]:
    """Normalized lag-h noise autocorrelation under epoch sampling.

    delta_{h,0} - 1[1 <= |h| <= M] (M - |h|) / (M (M - 1))

    Args:
        h: Lag in steps (sign ignored)
        M: Batches per epoch
        exact: Return a Fraction instead of a float

    Raises:
        DegenerateEpochError: If M < 2
    """
    if M < 2:
        raise DegenerateEpochError(f"autocorrelation kernel needs M >= 2, got {M}")
    h = abs(int(h))
    if h == 0:
        value = Fraction(1)
    elif h <= M:
        value = -Fraction(M - h, M * (M - 1))
    else:
        value = Fraction(0)
    return value if exact else float(value)


def autocorr_weights(M: int, max_lag: int) -> np.ndarray:
    """Kernel values for lags -max_lag..max_lag (index ``max_lag`` is lag 0)."""
    if M < 2:
        raise DegenerateEpochError(f"autocorrelation kernel needs M >= 2, got {M}")
    lags = np.abs(np.arange(-max_lag, max_lag + 1))
    weights = np.where(lags <= M, -(M - lags) / (M * (M - 1.0)), 0.0)
    weights[lags == 0] = 1.0
    return weights


# Exact oracle


def _check_oracle_args(N: int, S: int, h: int):
    if N > ORACLE_MAX_EXAMPLES:
        raise OracleSizeError(
            f"combinatorial oracle limited to N <= {ORACLE_MAX_EXAMPLES}, got {N}"
        )
    if S < 1 or S > N:
        raise ValidationError(f"need 1 <= S <= N, got S={S}, N={N}")
    if N % S:
        raise ValidationError(f"oracle needs S | N, got N={N}, S={S}")
    M = N // S
    if not 0 <= h <= 2 * M:
        raise ValidationError(f"lag must lie in [0, 2M] = [0, {2 * M}], got {h}")
    return M


def _same_epoch_pair(N: int, S: int, p: int, q: int, same_example: bool) -> Fraction:
    """P(tracked example(s) sit in batch p and batch q of one epoch).

    Enumerates the ordered slots the two tracked examples take in a uniform
    permutation; every ordered pair of distinct slots is equally likely.
    """
    if same_example:
        hits = sum(1 for a in range(N) if a // S == p and a // S == q)
        return Fraction(hits, N)
    hits = sum(
        1 for a, b in itertools.permutations(range(N), 2) if a // S == p and b // S == q
    )
    return Fraction(hits, N * (N - 1))


def _same_epoch_pair_brute_force(
    N: int, S: int, p: int, q: int, same_example: bool
) -> Fraction:
    """Same quantity by walking every permutation of the N examples."""
    hits = total = 0
    first, second = 0, 0 if same_example else 1
    for perm in itertools.permutations(range(N)):
        slot = {example: i for i, example in enumerate(perm)}
        total += 1
        if slot[first] // S == p and slot[second] // S == q:
            hits += 1
    return Fraction(hits, total)


def pair_probability_oracle(
    N: int,
    S: int,
    h: int,
    same_example: bool,
    position: Optional[int] = None,
    brute_force: bool = False,
) -> Fraction:
    """E[s_k^n s_{k+h}^m] for epoch sampling, exactly.

    s_k^n indicates that example n is in batch k. Batch k sits at offset
    ``position`` within its epoch; when ``position`` is None the result is averaged
    over the M equally likely offsets (the stationary value). Lags that cross an
    epoch boundary pair two independent permutations.

    Args:
        N: Number of examples (at most 12)
        S: Batch size, must divide N
        h: Lag, 0 <= h <= 2M
        same_example: Whether m == n
        position: Offset of batch k within its epoch
        brute_force: Enumerate full permutations (N <= 8) instead of slot pairs

    Raises:
        OracleSizeError: If N > 12
    """
    M = _check_oracle_args(N, S, h)
    if brute_force and N > BRUTE_FORCE_MAX_EXAMPLES:
        raise OracleSizeError(
            f"permutation enumeration limited to N <= {BRUTE_FORCE_MAX_EXAMPLES}, got {N}"
        )
    if position is not None and not 0 <= position < M:
        raise ValidationError(f"position must lie in [0, {M}), got {position}")

    within = _same_epoch_pair_brute_force if brute_force else _same_epoch_pair
    across = Fraction(S, N) ** 2
    positions = range(M) if position is None else [position]

    total = Fraction(0)
    for p in positions:
        q = p + h
        total += within(N, S, p, q, same_example) if q < M else across
    return total / len(positions)


def indicator_covariance_oracle(
    N: int, S: int, h: int, position: Optional[int] = None
) -> tuple[Fraction, Fraction]:
    """cov(s_k^n, s_{k+h}^n) and cov(s_k^n, s_{k+h}^m), m != n."""
    mean_sq = Fraction(S, N) ** 2
    same = pair_probability_oracle(N, S, h, True, position) - mean_sq
    diff = pair_probability_oracle(N, S, h, False, position) - mean_sq
    return same, diff


def noise_autocorr_oracle(N: int, S: int, h: int, position: Optional[int] = None) -> Fraction:
    """Lag-h minibatch noise covariance relative to lag 0, from indicator covariances.

    With offsets summing to zero, <dg_k dg_{k+h}^T> = (N-1)/S^2 (c_same - c_diff) C0,
    so the normalized kernel is the ratio of (c_same - c_diff) at lag h and lag 0.
    """
    same_h, diff_h = indicator_covariance_oracle(N, S, h, position)
    same_0, diff_0 = indicator_covariance_oracle(N, S, 0, position)
    return (same_h - diff_h) / (same_0 - diff_0)


def noise_scale_oracle(N: int, S: int) -> Fraction:
    """Lag-0 factor relating C to C0: (N-1)/S^2 (c_same - c_diff) = (1/S)(1 - S/N)."""
    same_0, diff_0 = indicator_covariance_oracle(N, S, 0)
    return Fraction(N - 1, S * S) * (same_0 - diff_0)
