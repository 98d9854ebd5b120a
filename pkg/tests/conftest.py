import numpy as np
import pytest

from specmap.rules import load_specl


@pytest.fixture(scope="session")
def specl():
    return load_specl()


@pytest.fixture
def rng():
    return np.random.default_rng(20230814)
