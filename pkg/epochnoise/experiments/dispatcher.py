"""Experiment registry and runner."""

from pathlib import Path
from typing import Optional

from ..config import ExperimentConfig, config_to_dict
from ..errors import ConfigError, EpochNoiseError
from ..log_setup import get_logger
from ..manifest import ArtifactWriter, RunManifest
from .base import ExperimentContext, ExperimentHandler, SeedStreams

logger = get_logger(__name__)


class ExperimentDispatcher:
    """Registry and dispatcher for experiment kinds."""

    def __init__(self):
        self._experiments: dict[str, ExperimentHandler] = {}

    def register(self, handler: ExperimentHandler) -> None:
        """Register an experiment handler.

        Args:
            handler: ExperimentHandler instance to register
        """
        self._experiments[handler.name] = handler
        logger.debug(f"Registered experiment: {handler.name}")

    def get_experiments(self) -> list[ExperimentHandler]:
        """Get all registered handlers."""
        return list(self._experiments.values())

    def dispatch(self, context: ExperimentContext) -> dict:
        """Run the handler for ``context.config.experiment.kind``.

        Returns:
            Summary metrics from the handler

        Raises:
            ConfigError: If no handler is registered for the kind
        """
        kind = context.config.experiment.kind
        handler = self._experiments.get(kind)
        if handler is None:
            raise ConfigError(f"Unknown experiment kind: {kind}. Try `enl list`")

        try:
            logger.run_event(kind, f"starting, output in {context.output_dir}")
            return handler.run(context)
        except EpochNoiseError as e:
            logger.error(f"Experiment {kind} failed: {e}")
            raise
        except Exception as e:
            logger.error(f"Unexpected error in experiment {kind}: {e}", exc_info=True)
            raise


def create_dispatcher() -> ExperimentDispatcher:
    """Create and populate the dispatcher with every built-in experiment."""
    from .appendix_f_pca import PcaExperiment
    from .appendix_h_replacement import ReplacementExperiment
    from .appendix_i_sweep import SweepExperiment
    from .appendix_n_noncommuting import NoncommutingExperiment
    from .fig1_autocorr import AutocorrExperiment
    from .fig2_variances import VarianceExperiment
    from .loss_fluct import LossFluctuationExperiment
    from .oracle_check import OracleCheckExperiment
    from .theory_table import TheoryTableExperiment

    dispatcher = ExperimentDispatcher()
    dispatcher.register(TheoryTableExperiment())
    dispatcher.register(AutocorrExperiment())
    dispatcher.register(VarianceExperiment())
    dispatcher.register(PcaExperiment())
    dispatcher.register(ReplacementExperiment())
    dispatcher.register(SweepExperiment())
    dispatcher.register(NoncommutingExperiment())
    dispatcher.register(OracleCheckExperiment())
    dispatcher.register(LossFluctuationExperiment())
    return dispatcher


def run_experiment(
    config: ExperimentConfig,
    dispatcher: Optional[ExperimentDispatcher] = None,
) -> RunManifest:
    """Validate ``config``, run its experiment and write the manifest last.

    Artifacts go to ``<experiment.output_dir>/<kind>/``.
    """
    config.validate()
    dispatcher = dispatcher or create_dispatcher()
    kind = config.experiment.kind
    output_dir = Path(config.experiment.output_dir) / kind

    manifest = RunManifest(kind=kind, config=config_to_dict(config))
    writer = ArtifactWriter(output_dir, manifest, header={"version": manifest.version})
    seeds = SeedStreams(config.experiment.seed)
    context = ExperimentContext(config=config, writer=writer, seeds=seeds, output_dir=output_dir)

    manifest.metrics = dispatcher.dispatch(context)
    manifest.rng_streams = seeds.used
    path = writer.finish()
    logger.run_event(kind, f"done in {manifest.wall_clock_seconds:.1f}s, manifest {path}")
    return manifest
