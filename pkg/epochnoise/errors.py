"""Exception hierarchy for epochnoise."""


class EpochNoiseError(Exception):
    """Base class for all epochnoise errors."""

    exit_code: int = 1


class ConfigError(EpochNoiseError):
    """Invalid experiment configuration."""

    exit_code = 2


class ValidationError(EpochNoiseError, ValueError):
    """Invalid arguments passed to an operation."""

    exit_code = 2


class StabilityError(ValidationError):
    """Hyperparameters outside 0 < eta*lambda < 2(1+beta), 0 <= beta < 1."""


class DegenerateEpochError(ValidationError):
    """Fewer than two batches per epoch; the noise kernel is undefined."""


class OracleSizeError(ValidationError):
    """Exact enumeration requested for a dataset that is too large."""


class DivergenceError(EpochNoiseError):
    """Simulated weights blew up."""

    exit_code = 3
