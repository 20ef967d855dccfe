"""Hyperparameters, spectra and synthetic quadratic ensembles.

Every ensemble describes a quadratic loss whose per-example gradient is
``H @ theta + eps_n``. The offsets ``eps_n`` do not depend on the weights, so the
minibatch noise is weight-independent and sums to zero over an epoch.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .errors import DegenerateEpochError, StabilityError, ValidationError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-10
PSD_TOL = 1e-10

SeedLike = Union[int, np.random.SeedSequence]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Counter-based generator for one (experiment, replica) stream."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Hyperparams:
    """Optimizer hyperparameters and dataset sizes."""

    eta: float  # Learning rate
    beta: float  # Heavy-ball momentum
    batch_size: int  # S
    num_examples: int  # N

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not 0 <= self.beta < 1:
            raise ValidationError(f"beta must lie in [0, 1), got {self.beta}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batch_size > self.num_examples:
            raise ValidationError(
                f"batch_size {self.batch_size} exceeds num_examples {self.num_examples}"
            )

    @classmethod
    def from_batches(cls, eta: float, beta: float, batches: int, batch_size: int = 1):
        """Hyperparams with exactly ``batches`` minibatches per epoch."""
        return cls(eta=eta, beta=beta, batch_size=batch_size, num_examples=batches * batch_size)

    @property
    def integer_epoch(self) -> bool:
        """True when N is a multiple of S."""
        return self.num_examples % self.batch_size == 0

    @property
    def batches_per_epoch(self) -> int:
        """M = N/S, rounded up when N is not a multiple of S."""
        return math.ceil(self.num_examples / self.batch_size)

    def require_epochs(self) -> int:
        """Return M for the closed-form theory, rejecting full-batch training."""
        m = self.batches_per_epoch
        if m < 2:
            raise DegenerateEpochError(
                f"theory needs at least two batches per epoch, got M={m}"
            )
        if not self.integer_epoch:
            logger.warning(
                f"N={self.num_examples} is not a multiple of S={self.batch_size}; "
                f"using M=ceil(N/S)={m} as an approximation"
            )
        return m

    @property
    def noise_factor(self) -> float:
        """(1/S)(1 - S/N), the factor relating C to C0 for epoch sampling."""
        s, n = self.batch_size, self.num_examples
        return (1.0 / s) * (1.0 - s / n)

    @property
    def iid_noise_factor(self) -> float:
        """Factor relating C to C0 when examples are drawn with replacement."""
        s, n = self.batch_size, self.num_examples
        return (n - 1) / (n * s)

    def stable(self, lam: float) -> bool:
        """Whether 0 < eta*lambda < 2(1+beta)."""
        return 0 < self.eta * lam < 2 * (1 + self.beta)


@dataclass(frozen=True)
class Spectrum:
    """Hessian eigenvalues and the noise variances in the shared eigenbasis.

    ``noise_scale`` says whether ``noise_variances`` are eigenvalues of the minibatch
    noise covariance C ("minibatch") or of the per-example covariance C0
    ("per_example").
    """

    lambdas: np.ndarray
    noise_variances: np.ndarray
    noise_scale: str = "minibatch"

    def __post_init__(self):
        lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        variances = np.atleast_1d(np.asarray(self.noise_variances, dtype=float))
        if variances.size == 1 and lambdas.size > 1:
            variances = np.full_like(lambdas, variances[0])
        if lambdas.shape != variances.shape or lambdas.ndim != 1:
            raise ValidationError("lambdas and noise_variances must have the same length")
        if lambdas.size == 0:
            raise ValidationError("spectrum must contain at least one eigenvalue")
        if np.any(lambdas <= 0):
            raise ValidationError("Hessian eigenvalues must be positive")
        if np.any(np.diff(lambdas) > 0):
            raise ValidationError("Hessian eigenvalues must be sorted descending")
        if np.any(variances < 0):
            raise ValidationError("noise variances must be non-negative")
        if self.noise_scale not in ("minibatch", "per_example"):
            raise ValidationError(f"unknown noise_scale '{self.noise_scale}'")
        lambdas.setflags(write=False)
        variances.setflags(write=False)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "noise_variances", variances)

    @classmethod
    def proportional(cls, lambdas, c: float, noise_scale: str = "minibatch") -> "Spectrum":
        """Noise variances sigma_i^2 = c * lambda_i (eigenvalues sorted descending)."""
        lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
        return cls(lambdas=lambdas, noise_variances=c * lambdas, noise_scale=noise_scale)

    @classmethod
    def log_spaced(
        cls, lo: float, hi: float, count: int, c: float = 1.0, noise_scale: str = "minibatch"
    ) -> "Spectrum":
        """``count`` eigenvalues log-spaced over [lo, hi], noise proportional to lambda."""
        if not 0 < lo <= hi:
            raise ValidationError(f"need 0 < lo <= hi, got [{lo}, {hi}]")
        return cls.proportional(np.geomspace(hi, lo, count), c, noise_scale)

    @classmethod
    def isotropic(cls, dim: int, lam: float, variance: float) -> "Spectrum":
        """Isotropic Hessian with isotropic noise."""
        return cls(lambdas=np.full(dim, float(lam)), noise_variances=np.full(dim, float(variance)))

    def __len__(self) -> int:
        return self.lambdas.size

    def minibatch_variances(self, hp: Hyperparams) -> np.ndarray:
        """Eigenvalues of C."""
        if self.noise_scale == "minibatch":
            return np.array(self.noise_variances)
        return self.noise_variances * hp.noise_factor

    def per_example_variances(self, hp: Hyperparams) -> np.ndarray:
        """Eigenvalues of C0."""
        if self.noise_scale == "per_example":
            return np.array(self.noise_variances)
        factor = hp.noise_factor
        if factor == 0:
            if np.any(self.noise_variances > 0):
                raise DegenerateEpochError("full-batch training (S = N) carries no noise")
            return np.zeros_like(self.noise_variances)
        return self.noise_variances / factor

    def check_stability(self, hp: Hyperparams) -> None:
        """Raise StabilityError unless every eigenvalue satisfies the stability bound."""
        bad = [lam for lam in self.lambdas if not hp.stable(lam)]
        if bad:
            raise StabilityError(
                f"{len(bad)} eigenvalue(s) violate 0 < eta*lambda < 2(1+beta); "
                f"largest eta*lambda = {hp.eta * max(bad):.4g}"
            )


@dataclass(frozen=True, eq=False)
class QuadraticEnsemble:
    """Quadratic loss with weight-independent per-example gradient offsets.

    ``hessian`` is a vector of eigenvalues when ``storage == "diagonal"`` and a dense
    symmetric matrix when ``storage == "dense"``. ``example_noise`` holds one row
    eps_n per example. Arrays are read-only.
    """

    hessian: np.ndarray
    example_noise: np.ndarray
    storage: str = "diagonal"
    basis: Optional[np.ndarray] = None
    exact_match: bool = True
    cosine_to_hessian: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.storage not in ("diagonal", "dense"):
            raise ValidationError(f"unknown storage '{self.storage}'")
        hessian = np.array(self.hessian, dtype=float)
        noise = np.array(self.example_noise, dtype=float)
        if noise.ndim != 2:
            raise ValidationError("example_noise must be an (N, d) array")
        d = noise.shape[1]
        expected = (d,) if self.storage == "diagonal" else (d, d)
        if hessian.shape != expected:
            raise ValidationError(f"hessian shape {hessian.shape} does not match {expected}")
        if self.basis is not None:
            basis = np.array(self.basis, dtype=float)
            gram = basis.T @ basis
            if np.max(np.abs(gram - np.eye(gram.shape[0]))) > ORTHONORMAL_TOL:
                raise ValidationError("basis is not orthonormal")
            basis.setflags(write=False)
            object.__setattr__(self, "basis", basis)
        hessian.setflags(write=False)
        noise.setflags(write=False)
        object.__setattr__(self, "hessian", hessian)
        object.__setattr__(self, "example_noise", noise)

    @property
    def dim(self) -> int:
        return self.example_noise.shape[1]

    @property
    def num_examples(self) -> int:
        return self.example_noise.shape[0]

    def hessian_matrix(self) -> np.ndarray:
        """Dense d x d Hessian."""
        if self.storage == "diagonal":
            return np.diag(self.hessian)
        return np.array(self.hessian)

    def apply_hessian(self, theta: np.ndarray) -> np.ndarray:
        """H @ theta (also the full-batch gradient, since the offsets sum to zero)."""
        if self.storage == "diagonal":
            return self.hessian * theta
        return self.hessian @ theta

    full_gradient = apply_hessian

    def eigenbasis(self) -> tuple[np.ndarray, np.ndarray]:
        """Hessian eigenvalues (descending) and eigenvectors as columns."""
        if "eigen" not in self._cache:
            if self.storage == "diagonal":
                order = np.argsort(self.hessian, kind="stable")[::-1]
                vectors = np.eye(self.dim)[:, order]
                values = self.hessian[order]
            else:
                values, vectors = linalg.eigh(self.hessian)
                values, vectors = values[::-1], vectors[:, ::-1]
            self._cache["eigen"] = (values, vectors)
        return self._cache["eigen"]

    def sample_covariance(self) -> np.ndarray:
        return sample_covariance(self)

    def noise_covariance(self, hp: Hyperparams, mode: str = "epoch") -> np.ndarray:
        """Minibatch noise covariance C for epoch or with-replacement sampling."""
        factor = hp.noise_factor if mode == "epoch" else hp.iid_noise_factor
        return factor * sample_covariance(self)

    def directional_noise(self, hp: Hyperparams, basis: np.ndarray, mode: str = "epoch"):
        """p_i^T C p_i for each column p_i of ``basis``."""
        factor = hp.noise_factor if mode == "epoch" else hp.iid_noise_factor
        projected = self.example_noise @ basis
        return factor * np.sum(projected**2, axis=0) / (self.num_examples - 1)

    def content_hash(self) -> str:
        """sha256 over the serialized header, Hessian and offsets."""
        if "hash" not in self._cache:
            digest = hashlib.sha256()
            digest.update(f"{self.dim}:{self.num_examples}:{self.storage}".encode())
            digest.update(np.ascontiguousarray(self.hessian).tobytes())
            digest.update(np.ascontiguousarray(self.example_noise).tobytes())
            self._cache["hash"] = digest.hexdigest()
        return self._cache["hash"]


def sample_covariance(ensemble: QuadraticEnsemble) -> np.ndarray:
    """C0 = (1/(N-1)) sum_n eps_n eps_n^T."""
    n = ensemble.num_examples
    if n < 2:
        raise ValidationError("sample covariance needs at least two examples")
    eps = ensemble.example_noise
    c0 = eps.T @ eps / (n - 1)
    return 0.5 * (c0 + c0.T)


def _centered_gaussian(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.standard_normal((n, d))
    return z - z.mean(axis=0)


def build_commuting_ensemble(spectrum: Spectrum, hp: Hyperparams, seed: SeedLike):
    """Diagonal Hessian with per-coordinate noise whitened to the exact target.

    The offsets are Gaussian, centered so they sum to zero, then rescaled column by
    column so that diag(C) equals the requested minibatch variances exactly.
    """
    n, d = hp.num_examples, len(spectrum)
    if n < 2:
        raise ValidationError("need at least two examples")
    targets = spectrum.per_example_variances(hp)

    z = _centered_gaussian(make_rng(seed), n, d)
    realized = np.sum(z**2, axis=0) / (n - 1)
    scale = np.zeros(d)
    nonzero = targets > 0
    scale[nonzero] = np.sqrt(targets[nonzero] / realized[nonzero])
    eps = z * scale
    # Re-center after scaling to keep the epoch sum at machine zero
    eps -= eps.mean(axis=0)

    return QuadraticEnsemble(hessian=spectrum.lambdas, example_noise=eps, storage="diagonal")


def _symmetric_root(matrix: np.ndarray, inverse: bool = False, rank_tol: float = 1e-12):
    """Symmetric (pseudo-inverse) square root via eigh; returns (root, rank)."""
    values, vectors = linalg.eigh(0.5 * (matrix + matrix.T))
    cutoff = rank_tol * max(values.max(), 0.0)
    keep = values > cutoff
    roots = np.zeros_like(values)
    if inverse:
        roots[keep] = 1.0 / np.sqrt(values[keep])
    else:
        roots[keep] = np.sqrt(values[keep])
    return (vectors * roots) @ vectors.T, int(keep.sum())


def _require_symmetric_psd(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    scale = max(np.max(np.abs(matrix)), 1.0)
    if np.max(np.abs(matrix - matrix.T)) > PSD_TOL * scale:
        raise ValidationError(f"{name} is not symmetric")
    if linalg.eigvalsh(matrix).min() < -PSD_TOL * scale:
        raise ValidationError(f"{name} is not positive semi-definite")
    return 0.5 * (matrix + matrix.T)


def build_noncommuting_ensemble(
    hessian: np.ndarray,
    c0_target: np.ndarray,
    num_examples: int,
    seed: SeedLike,
    require_exact: bool = False,
) -> QuadraticEnsemble:
    """Dense Hessian with offsets whose sample covariance matches ``c0_target``.

    Centered Gaussian offsets are mapped through c0_target^{1/2} (realized C0)^{-1/2}.
    With fewer than d+1 examples the realized covariance is singular; the map is then
    applied on its span only and ``exact_match`` is False.
    """
    hessian = _require_symmetric_psd(hessian, "hessian")
    c0_target = _require_symmetric_psd(c0_target, "c0_target")
    d = hessian.shape[0]
    if c0_target.shape != (d, d):
        raise ValidationError("hessian and c0_target must have the same dimension")
    if num_examples < 2:
        raise ValidationError("need at least two examples")

    exact = num_examples - 1 >= d
    if not exact and require_exact:
        raise ValidationError(
            f"exact covariance matching needs N-1 >= d, got N={num_examples}, d={d}"
        )

    z = _centered_gaussian(make_rng(seed), num_examples, d)
    realized = z.T @ z / (num_examples - 1)
    inv_root, rank = _symmetric_root(realized, inverse=True)
    if rank < d:
        exact = False
        logger.warning(
            f"realized C0 has rank {rank} < {d}; covariance matched on its span only"
        )
    target_root, _ = _symmetric_root(c0_target)
    eps = z @ inv_root @ target_root
    eps -= eps.mean(axis=0)

    from .stats import cosine_similarity

    realized_c0 = eps.T @ eps / (num_examples - 1)
    cosine = cosine_similarity(realized_c0, hessian)
    values, vectors = linalg.eigh(hessian)
    basis = vectors[:, ::-1]

    return QuadraticEnsemble(
        hessian=hessian,
        example_noise=eps,
        storage="dense",
        basis=basis,
        exact_match=exact,
        cosine_to_hessian=cosine,
    )


def random_orthogonal(dim: int, seed: SeedLike) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR of a Gaussian matrix."""
    q, r = linalg.qr(make_rng(seed).standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def random_psd(eigenvalues, seed: SeedLike) -> np.ndarray:
    """Symmetric matrix with the given eigenvalues in a random orthonormal basis."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    q = random_orthogonal(eigenvalues.size, seed)
    matrix = (q * eigenvalues) @ q.T
    return 0.5 * (matrix + matrix.T)


def wishart_perturbation(dim: int, std: float, seed: SeedLike) -> np.ndarray:
    """(1/d) X X^T with X_ij ~ N(0, std^2)."""
    x = std * make_rng(seed).standard_normal((dim, dim))
    return x @ x.T / dim


def save_ensemble(ensemble: QuadraticEnsemble, path: Path) -> Path:
    """Write an ensemble to ``.npz``: header (d, N, storage), then H, then eps row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "header": np.array([ensemble.dim, ensemble.num_examples], dtype=np.int64),
        "storage": np.array(ensemble.storage),
        "hessian": ensemble.hessian,
        "example_noise": np.ascontiguousarray(ensemble.example_noise),
    }
    if ensemble.basis is not None:
        arrays["basis"] = ensemble.basis
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_ensemble(path: Path) -> QuadraticEnsemble:
    """Read an ensemble written by save_ensemble."""
    with np.load(Path(path), allow_pickle=False) as data:
        dim, num_examples = (int(v) for v in data["header"])
        noise = data["example_noise"]
        if noise.shape != (num_examples, dim):
            raise ValidationError(f"{path}: header does not match the stored offsets")
        return QuadraticEnsemble(
            hessian=data["hessian"],
            example_noise=noise,
            storage=str(data["storage"]),
            basis=data["basis"] if "basis" in data.files else None,
        )
