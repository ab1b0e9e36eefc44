"""Shared fixtures for the DLRM training kit tests."""

import numpy as np
import pytest

from src.bench.presets import get_preset
from src.core.logging_config import quiet_logging
from src.model.config import build_config

quiet_logging()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_config():
    return get_preset("tiny")


@pytest.fixture
def four_table_config():
    """Small enough to train in milliseconds, enough tables for four ranks."""
    return build_config(dict(
        name="four-table", N=8, GN=8, LN=4, P=3, S=4, E=4, M=50,
        bottom_mlp=[3, 8, 4], top_mlp=[8, 1],
    ))


@pytest.fixture
def eight_table_config():
    """One table per rank at eight ranks."""
    return build_config(dict(
        name="eight-table", N=16, GN=16, LN=2, P=3, S=8, E=4, M=50,
        bottom_mlp=[3, 8, 4], top_mlp=[8, 1],
    ))
