"""Shared fixtures."""

import numpy as np
import pytest

from epochnoise.config import get_default_config
from epochnoise.model import Hyperparams, Spectrum, build_commuting_ensemble


@pytest.fixture
def hp() -> Hyperparams:
    """eta=0.05, beta=0.5, S=2, N=20 (M=10)."""
    return Hyperparams(eta=0.05, beta=0.5, batch_size=2, num_examples=20)


@pytest.fixture
def spectrum() -> Spectrum:
    return Spectrum.log_spaced(0.1, 10.0, 6, c=1.0)


@pytest.fixture
def ensemble(spectrum, hp):
    return build_commuting_ensemble(spectrum, hp, seed=1234)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


@pytest.fixture
def make_config(tmp_path):
    """Default config for a kind, writing under tmp_path, with section overrides."""

    def make(kind: str, **sections):
        config = get_default_config(kind)
        config.experiment.output_dir = str(tmp_path / "runs")
        for section, values in sections.items():
            target = getattr(config, section)
            for key, value in values.items():
                setattr(target, key, value)
        return config

    return make
