import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.scenarios import TwoLevelDecayModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_level():
    """Reference decay model, Gamma_+ = 2, Gamma_- = 1."""
    return TwoLevelDecayModel(2.0, 1.0)
