"""Shared fixtures."""

import numpy as np
import pytest

from ocunet.model import ModelConfig, build_ocunet
from ocunet.synth import synth_dataset
from ocunet.tensor import Precision, precision


@pytest.fixture
def double():
    with precision(Precision.DOUBLE):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(base_channels=2, num_classes=3, input_size=(16, 16), seed=7)


@pytest.fixture
def tiny_model(tiny_config):
    return build_ocunet(tiny_config)


@pytest.fixture
def binary_data(tmp_path):
    """Four 16x16 binary samples, one of them in the test split."""
    return synth_dataset(
        tmp_path / "synth", 4, size=(16, 16), classes=1, seed=3, test_fraction=0.25
    )


@pytest.fixture
def orca_data(tmp_path):
    return synth_dataset(tmp_path / "orca", 3, size=(16, 16), classes=3, seed=5)
