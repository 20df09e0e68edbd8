"""
Shared test fixtures and utilities for gauss-distill tests.

Reduces repetition across test modules by providing seeded data sets, small
training configs and common mock setups.
"""

from unittest.mock import Mock

import numpy as np
import pytest

from gauss_distill.core.data_models import EmbeddingDataset
from gauss_distill.core.trainer import TrainConfig


@pytest.fixture
def rng():
    """Seeded generator so every test sees the same draws."""
    return np.random.default_rng(1234)


@pytest.fixture
def mock_psutil():
    """Mock psutil module with fixed process CPU times and core count."""
    mock = Mock()
    mock.Process.return_value.cpu_times.return_value = Mock(user=1.5, system=0.25)
    mock.cpu_count.return_value = 4
    return mock


@pytest.fixture
def linear_dataset():
    """Base features with two teachers that are linear maps of them."""
    rng = np.random.default_rng(7)
    base = rng.standard_normal((80, 5))
    first = base @ rng.standard_normal((5, 3))
    second = base @ rng.standard_normal((5, 2))
    return EmbeddingDataset(base, [("alpha", first), ("beta", second)])


@pytest.fixture
def tiny_config():
    """A config small enough for many runs per test."""
    return TrainConfig(
        seed=3,
        epochs=3,
        batch_size=16,
        lr=1e-2,
        student_hidden=(8,),
        student_dim=4,
        head_depth=2,
        head_hidden=8,
    )
