from __future__ import annotations

import numpy as np
import pytest

from bsvie import build_grid, sample_ensemble


@pytest.fixture(scope="session")
def unit_grid():
    return build_grid(1.0, 16)


@pytest.fixture(scope="session")
def unit_ensemble(unit_grid):
    return sample_ensemble(unit_grid, 4096, seed=5)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
