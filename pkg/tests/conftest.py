import numpy as np
import pytest

from gclica.numerics import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def laplace5():
    """5 unit-variance Laplace sources, T = 20000."""
    return np.random.default_rng(7).laplace(0, 1 / np.sqrt(2), size=(20000, 5))
