"""Fixtures for gradient_standin"""

import numpy as np
import pytest

from gradient_standin.defense import reset_moment_constants
from gradient_standin.nn import MlpSpec, init_params


@pytest.fixture(autouse=True)
def reset_constants():
    """Reset the moment constants before and after each test."""
    reset_moment_constants()
    yield
    reset_moment_constants()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return MlpSpec((4, 3, 2), "tanh")


@pytest.fixture
def small_params(small_spec):
    return init_params(small_spec, seed=3)
