import sys
from pathlib import Path

import numpy as np
import pytest

# modules live at the repository root
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
