"""``pytest`` configuration."""

import os

import numpy as np
import pytest

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.synthdata import ProblemSpec


def _drop_env():
    for key in [k for k in os.environ if k.startswith("HEAVYTAIL_")]:
        del os.environ[key]


@pytest.fixture(autouse=True)
def clean_settings():
    """Every test starts from default settings; the CLI writes to the env."""
    saved = {k: v for k, v in os.environ.items() if k.startswith("HEAVYTAIL_")}
    _drop_env()
    get_settings.cache_clear()
    yield
    _drop_env()
    os.environ.update(saved)
    get_settings.cache_clear()


@pytest.fixture
def scalar_spec():
    """d = b = 1, two nodes."""
    return ProblemSpec(d=1, n_nodes=2, batch_sizes=1, eta=0.5, sigma_y=0.5)


@pytest.fixture
def vector_spec():
    return ProblemSpec(d=3, n_nodes=4, batch_sizes=4, eta=0.2, sigma_y=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
