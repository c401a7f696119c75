"""Shared fixtures: seeded generators, 64-bit precision, tiny networks and datasets."""

import numpy as np
import pytest

from src.config.run_config import GenConfig, NetConfig, PhantomSpec
from src.data.dataset import write_dataset
from src.tensor.core import precision


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    with precision("float64") as dtype:
        yield dtype


@pytest.fixture
def tiny_net() -> NetConfig:
    """Two levels on 8x8 inputs, attention at both levels."""
    return NetConfig(
        levels=2,
        filters=[4, 8],
        attention_depths=[1, 1],
        heads=2,
        num_classes=3,
        input_size=8,
    )


@pytest.fixture
def tiny_dataset(tmp_path):
    """Six 24x24 phantoms with the four desk organs."""
    config = GenConfig(cases=6, phantom=PhantomSpec(size=24, num_organs=4), folds=3)
    return write_dataset(tmp_path / "data", config, seed=3)


@pytest.fixture
def no_logging_setup(mocker):
    """Keep CLI runs from adding loguru sinks on CliRunner's temporary streams."""
    return mocker.patch("src.main.setup_logging")
