from __future__ import annotations

import numpy as np
import pytest

from qmath.workbench.mps import MPSChain, build_expander_mps
from qmath.workbench.softtorus import SoftTorus, voiculescu_pair


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def voiculescu3() -> SoftTorus:
    return voiculescu_pair(3)


@pytest.fixture
def voiculescu4() -> SoftTorus:
    return voiculescu_pair(4)


@pytest.fixture
def expander_chain() -> MPSChain:
    return build_expander_mps(4, 4, 10, seed=7)


def random_hermitian(k: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    return (g + g.conj().T) / 2
