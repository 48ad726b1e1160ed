import sys
from pathlib import Path

import pytest

from agnostic_control import ExperimentConfig

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def cfg():
    return ExperimentConfig(n_paths=2000, root_seed=20240611)
