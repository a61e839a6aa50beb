"""
Shared pytest fixtures for all test modules.

This module contains common fixtures used across multiple test files: small
multi-domain datasets, fast training configurations and reset hooks for the
process-wide configuration.
"""

import numpy as np
import pytest

from lipirm import config as config_module
from lipirm.benchmark import generate_benchmark
from lipirm.data import DomainDataset
from lipirm.grid import Grid1D
from lipirm.schemas import RpoConfig


@pytest.fixture(autouse=True)
def reset_config(monkeypatch):
    """
    Give every test a fresh configuration without progress bars.

    Notes
    -----
    The global instance is dropped again after the test so environment
    changes made with ``monkeypatch`` do not leak.
    """
    monkeypatch.setenv("LIPIRM_SHOW_PROGRESS", "false")
    config_module._config = None
    yield
    config_module._config = None


@pytest.fixture
def grid():
    """
    Coarse theory grid.

    Returns
    -------
    Grid1D
        65 nodes on [0, 1].
    """
    return Grid1D(65)


@pytest.fixture
def one_d_domains():
    """
    Two 1-D regression domains with features in [0, 1].

    Returns
    -------
    list of DomainDataset
        Domain 0 is uniform with small noise; domain 1 is concentrated on
        [0, 0.5] with larger noise. Both carry provided group ids (two per
        domain, split at x = 0.5).
    """
    rng = np.random.default_rng(7)
    x0 = rng.uniform(0.0, 1.0, 200)
    x1 = rng.uniform(0.0, 0.5, 120)
    truth = lambda x: np.sin(2 * np.pi * x) + 2.0  # noqa: E731
    return [
        DomainDataset(0, x0, truth(x0) + rng.normal(0.0, 0.05, x0.size), group_ids=(x0 >= 0.5).astype(int)),
        DomainDataset(1, x1, truth(x1) + rng.normal(0.0, 0.3, x1.size), group_ids=(x1 >= 0.25).astype(int)),
    ]


@pytest.fixture
def fast_rpo():
    """
    Training configuration small enough for unit tests.

    Returns
    -------
    RpoConfig
        One hidden layer of four units, ten full-batch epochs.
    """
    return RpoConfig(hidden=4, depth=1, epochs=10, log_every=5)


@pytest.fixture
def two_bit_bundle():
    """
    Small two-bit classification bundle with the setting-1 corruption.

    Returns
    -------
    DatasetBundle
        Three training, one validation and four test domains of 200 samples.
    """
    return generate_benchmark("two_bit", {"preset": "setting1", "n_per_domain": 200}, seed=3)


@pytest.fixture
def confounded_bundle():
    """
    Small confounded regression bundle.

    Returns
    -------
    DatasetBundle
        Wage preset with 150 samples per domain.
    """
    return generate_benchmark("confounded", {"preset": "wage", "n_per_domain": 150}, seed=5)
