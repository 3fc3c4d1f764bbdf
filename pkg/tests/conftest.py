import os
import sys

os.environ.setdefault("CAUSAL_LAB_LEDGER", "0")
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from datagen import generate_bundle


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def noiseless_pendulum():
    return generate_bundle("pendulum", n=1000, seed=3, m_u=2, noise_sd=0.0, noise_fraction=0.0)


@pytest.fixture(scope="session")
def small_pendulum():
    return generate_bundle("pendulum", n=64, seed=5, m_u=2)
