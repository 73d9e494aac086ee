"""Shared fixtures and import path setup for the test suite."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260814)
