"""Shared fixtures for the magbayes test suite."""

from __future__ import annotations

import numpy as np
import pytest

from magbayes.model import GAMMA_E
from magbayes.inference import UniformPrior


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def field_prior():
    """Single-parameter frequency prior covering fields up to 100 uT."""
    return UniformPrior([(0.0, GAMMA_E * 1e-4)])
