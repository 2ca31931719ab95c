"""Shared fixtures for the test suite."""
import copy

import numpy as np
import pytest

from dloasm import experiments as ex


@pytest.fixture
def cfg():
    return ex.default_config()


@pytest.fixture
def zero_cfg():
    c = ex.default_config()
    for key in c["noise"]:
        c["noise"][key] = 0
    return c


def zero_noise_config():
    c = ex.default_config()
    for key in c["noise"]:
        c["noise"][key] = 0
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
