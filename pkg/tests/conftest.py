import os

import numpy as np
import pytest

from salgen import synth
from salgen.data import DATA_DIR_ENV


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end criteria at desk scale (slow)"
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_digits():
    """Small synthetic split shared by unit tests (600 train / 300 test)."""
    return synth.make_digits(600, 300, seed=7)


@pytest.fixture(scope="session")
def real_data_dir():
    """Directory with official IDX files, when the environment provides one."""
    path = os.environ.get(DATA_DIR_ENV)
    if not path or not os.path.exists(os.path.join(path, "t10k-images-idx3-ubyte")):
        pytest.skip("no official IDX dataset available (set %s)" % DATA_DIR_ENV)
    return path
