"""Experiment pipelines for epochnoise."""

from .base import ExperimentContext, ExperimentHandler
from .dispatcher import ExperimentDispatcher, create_dispatcher, run_experiment

__all__ = [
    "ExperimentContext",
    "ExperimentDispatcher",
    "ExperimentHandler",
    "create_dispatcher",
    "run_experiment",
]
