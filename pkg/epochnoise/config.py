"""Configuration management for epochnoise experiments."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = (
    "theory-table",
    "fig1-autocorr",
    "fig2-variances",
    "appendix-f-pca",
    "appendix-h-replacement",
    "appendix-i-sweep",
    "appendix-n-noncommuting",
    "oracle-check",
    "loss-fluct",
)

NONCOMMUTING_MODES = ("perturbed", "random", "both")


@dataclass
class ExperimentSection:
    """Which experiment to run and where its artifacts go."""

    kind: str = "theory-table"
    seed: int = 20240101
    replicas: int = 1
    workers: int = 1  # Process pool size for replicas / grid points
    output_dir: str = "runs"


@dataclass
class HyperparamsConfig:
    """Optimizer and dataset sizes."""

    eta: float = 0.01  # Learning rate
    beta: float = 0.9  # Heavy-ball momentum
    batch_size: int = 4  # S
    num_examples: int = 400  # N; batches per epoch M = N / S


@dataclass
class EnsembleConfig:
    """Synthetic quadratic ensemble settings."""

    dim: int = 200
    spectrum: str = "log_spaced"  # log_spaced | isotropic
    # Eigenvalue range as multiples of lambda_cross (used when lambda_min/max are 0)
    lambda_min_factor: float = 0.01
    lambda_max_factor: float = 10.0
    lambda_min: float = 0.0  # Absolute override
    lambda_max: float = 0.0  # Absolute override
    isotropic_lambda: float = 1.0
    noise_proportionality: float = 1.0  # sigma_dg^2 = c * lambda
    isotropic_noise_variance: float = 1.0
    noise_scale: str = "minibatch"  # minibatch | per_example
    # Non-commuting ensembles
    noncommuting_mode: str = "both"  # perturbed | random | both
    perturbation_std: float = 0.02


@dataclass
class RunConfig:
    """Simulation settings."""

    steps: int = 20000
    burn_in: int = -1  # -1 = max(20 epochs, 10 * tau_SGD)
    probe: bool = False  # Freeze weights (eta = 0) and only record noise
    memory_budget: int = 50_000_000  # Floats kept before switching to projected recording
    drift: float = 0.0  # Injected constant drift speed (per step)
    tau_window_multiple: float = 0.0  # If > 0, steps = max(steps, multiple * tau_SGD)


@dataclass
class AnalysisConfig:
    """Estimator settings."""

    max_lag: int = 0  # 0 = 2M
    error_batches: int = 20  # Batched-means batches; errors reported as 2 sigma
    tau_lag: int = 0  # 0 = min(5M, T/10)
    small_fit_max_factor: float = 1.0 / 3.0  # Small-lambda fit region [lambda_min, f*lambda_cross]
    large_fit_min_factor: float = 3.0  # Large-lambda fit region [f*lambda_cross, lambda_max]


@dataclass
class SweepConfig:
    """Hyperparameter grid for appendix-i-sweep and oracle-check."""

    betas: list[float] = field(default_factory=lambda: [0.0, 0.5, 0.9])
    batches_per_epoch: list[int] = field(default_factory=lambda: [50, 100, 200])
    eta_lambdas: list[float] = field(
        default_factory=lambda: [1e-4, 0.01, 0.1, 0.5, 1.0, -0.9]
    )  # Negative entries mean "fraction of the stability edge 2(1+beta)"


@dataclass
class OutputConfig:
    """Artifact settings."""

    svg: bool = False  # Also write SVG line plots
    trajectory: bool = False  # fig1-autocorr: also write the recorded trajectory (long format)


@dataclass
class LoggingConfig:
    """Logging settings."""

    level: str = "INFO"  # DEBUG | INFO | WARNING | ERROR
    file: str = ""  # Empty = console only
    max_size_mb: int = 10
    backup_count: int = 3
    log_numeric: bool = True  # Numeric diagnostics (tail bounds, conditioning)


@dataclass
class ExperimentConfig:
    """Main configuration container."""

    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    hyperparams: HyperparamsConfig = field(default_factory=HyperparamsConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    run: RunConfig = field(default_factory=RunConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    _config_path: Optional[Path] = field(default=None, repr=False)

    def validate(self) -> None:
        """Raise ConfigError listing every problem found."""
        problems = []
        hp = self.hyperparams
        if self.experiment.kind not in EXPERIMENT_KINDS:
            problems.append(f"unknown experiment kind '{self.experiment.kind}'")
        if hp.eta <= 0:
            problems.append("hyperparams.eta must be positive")
        if not 0 <= hp.beta < 1:
            problems.append("hyperparams.beta must lie in [0, 1)")
        if hp.batch_size < 1:
            problems.append("hyperparams.batch_size must be >= 1")
        if hp.num_examples < 2:
            problems.append("hyperparams.num_examples must be >= 2")
        if hp.batch_size > hp.num_examples:
            problems.append("hyperparams.batch_size exceeds num_examples")
        if self.ensemble.dim < 1:
            problems.append("ensemble.dim must be >= 1")
        if self.ensemble.spectrum not in ("log_spaced", "isotropic"):
            problems.append(f"unknown ensemble.spectrum '{self.ensemble.spectrum}'")
        if self.ensemble.noise_scale not in ("minibatch", "per_example"):
            problems.append(f"unknown ensemble.noise_scale '{self.ensemble.noise_scale}'")
        if self.ensemble.noncommuting_mode not in NONCOMMUTING_MODES:
            problems.append(
                f"unknown ensemble.noncommuting_mode '{self.ensemble.noncommuting_mode}'"
            )
        if self.run.steps < 2:
            problems.append("run.steps must be >= 2")
        if self.experiment.replicas < 1:
            problems.append("experiment.replicas must be >= 1")
        if self.experiment.workers < 1:
            problems.append("experiment.workers must be >= 1")
        if self.analysis.error_batches < 2:
            problems.append("analysis.error_batches must be >= 2")
        if any(not 0 <= b < 1 for b in self.sweep.betas):
            problems.append("sweep.betas must lie in [0, 1)")
        if any(m < 2 for m in self.sweep.batches_per_epoch):
            problems.append("sweep.batches_per_epoch entries must be >= 2")
        if problems:
            raise ConfigError("; ".join(problems))


# Per-kind desk-scale defaults, applied on top of the dataclass defaults
KIND_DEFAULTS: dict[str, dict] = {
    "theory-table": {
        "hyperparams": {"eta": 7e-4, "beta": 0.9, "batch_size": 50, "num_examples": 50000},
        "ensemble": {"dim": 60},
    },
    "fig1-autocorr": {
        "ensemble": {"dim": 200},
        "run": {"steps": 2000, "probe": True},
    },
    "fig2-variances": {
        "ensemble": {"dim": 200},
        "run": {"steps": 60000},
    },
    "appendix-f-pca": {
        "hyperparams": {"eta": 0.002, "beta": 0.9, "batch_size": 1, "num_examples": 2000},
        "ensemble": {"dim": 64, "spectrum": "isotropic"},
        "run": {"steps": 50000, "burn_in": 2000, "drift": 1e-4},
    },
    "appendix-h-replacement": {
        "ensemble": {"dim": 100},
        "run": {"steps": 40000},
    },
    "appendix-i-sweep": {
        "ensemble": {"dim": 60},
        "run": {"steps": 4000, "tau_window_multiple": 40.0},
        "experiment": {"workers": 4},
    },
    "appendix-n-noncommuting": {
        "ensemble": {"dim": 100},
        "run": {"steps": 40000},
    },
    "oracle-check": {
        "sweep": {"betas": [0.0, 0.5, 0.9, 0.99], "batches_per_epoch": [5, 50, 500]},
    },
    "loss-fluct": {
        "hyperparams": {"eta": 7e-4, "beta": 0.9, "batch_size": 50, "num_examples": 50000},
        "ensemble": {"dim": 500, "lambda_min_factor": 1e-3, "lambda_max_factor": 2.0},
    },
}


def _dict_to_dataclass(cls, data: dict):
    """Recursively convert dict to dataclass, handling nested structures."""
    if data is None:
        return cls()

    field_types = {f.name: f.type for f in cls.__dataclass_fields__.values()}
    kwargs = {}

    for key, value in data.items():
        if key.startswith("_"):
            continue
        if key not in field_types:
            continue

        field_type = field_types[key]

        # Handle nested dataclasses
        if hasattr(field_type, "__dataclass_fields__") and isinstance(value, dict):
            kwargs[key] = _dict_to_dataclass(field_type, value)
        else:
            kwargs[key] = value

    return cls(**kwargs)


def _dataclass_to_dict(obj) -> dict:
    """Recursively convert dataclass to dict for YAML serialization."""
    if not hasattr(obj, "__dataclass_fields__"):
        return obj

    result = {}
    for field_name in obj.__dataclass_fields__:
        if field_name.startswith("_"):
            continue
        value = getattr(obj, field_name)
        if hasattr(value, "__dataclass_fields__"):
            result[field_name] = _dataclass_to_dict(value)
        elif isinstance(value, list):
            result[field_name] = list(value)
        else:
            result[field_name] = value
    return result


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-dict view of a config (used for manifests)."""
    return _dataclass_to_dict(config)


def _check_keys(data: dict, config_path: Path) -> None:
    """Raise ConfigError naming every section or key the config does not define."""
    known = _dataclass_to_dict(ExperimentConfig())
    unknown = [str(section) for section in data if section not in known]
    for section, values in data.items():
        if isinstance(values, dict) and isinstance(known.get(section), dict):
            unknown += [f"{section}.{key}" for key in values if key not in known[section]]
    if unknown:
        raise ConfigError(f"Unknown config keys in {config_path}: {', '.join(unknown)}")


def load_config(config_path: Optional[Path] = None, kind: Optional[str] = None) -> ExperimentConfig:
    """Load configuration from YAML file.

    Args:
        config_path: Config file or run manifest. Defaults to ./experiment.yaml
        kind: Experiment kind overriding the file's experiment.kind

    Returns:
        ExperimentConfig with loaded settings

    Raises:
        ConfigError: If the file is not a YAML mapping or names unknown keys
    """
    if config_path is None:
        config_path = Path("experiment.yaml")

    config_path = Path(config_path)

    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")

    with open(config_path, "r") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse {config_path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} must contain a mapping of sections")
    if isinstance(data.get("config"), dict) and "files" in data:
        # A run manifest: its resolved config block reproduces the run
        logger.info(f"Reading the resolved config recorded in manifest {config_path}")
        data = data["config"]

    _check_keys(data, config_path)
    kind = kind or (data.get("experiment") or {}).get("kind")
    base = _dataclass_to_dict(get_default_config(kind)) if kind in EXPERIMENT_KINDS else {}
    for section, values in data.items():
        if isinstance(values, dict) and isinstance(base.get(section), dict):
            base[section].update(values)
        else:
            base[section] = values

    try:
        config = _dict_to_dataclass(ExperimentConfig, base)
    except TypeError as e:
        raise ConfigError(f"Invalid section in {config_path}: {e}") from e
    if kind is not None:
        config.experiment.kind = kind
    config._config_path = config_path
    return config


def save_config(config: ExperimentConfig, config_path: Optional[Path] = None) -> None:
    """Save configuration to YAML file.

    Args:
        config: ExperimentConfig to save
        config_path: Path to save to. Uses config._config_path if not specified
    """
    if config_path is None:
        config_path = config._config_path or Path("experiment.yaml")

    config_path = Path(config_path)
    config_path.parent.mkdir(parents=True, exist_ok=True)

    data = _dataclass_to_dict(config)

    header = (
        f"# epochnoise experiment: {config.experiment.kind}\n"
        "# Generated by enl init-config\n\n"
    )

    with open(config_path, "w") as f:
        f.write(header)
        yaml.dump(data, f, default_flow_style=False, sort_keys=False, allow_unicode=True)


def get_default_config(kind: Optional[str] = None) -> ExperimentConfig:
    """Get an ExperimentConfig with defaults, tuned for ``kind`` when given."""
    config = ExperimentConfig()
    if kind is None:
        return config
    config.experiment.kind = kind
    for section, overrides in KIND_DEFAULTS.get(kind, {}).items():
        target = getattr(config, section)
        for key, value in overrides.items():
            setattr(target, key, list(value) if isinstance(value, list) else value)
    return config
