import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from latefuse.kernel import Rng


@pytest.fixture
def rng():
    return Rng(0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)
