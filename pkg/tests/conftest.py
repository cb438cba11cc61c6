import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to sys.path
sys.path.append(str(Path(__file__).parent.parent / "src"))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    """Seeded generator; fresh per test."""
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def toy():
    """The 11-token one-axis layout: 3 LR, 4 HR, 4 LR tokens at ratio 2."""
    from mixed_attention import toy_layout
    return toy_layout(2)


@pytest.fixture
def mock_config(mocker):
    """Config that never touches the filesystem."""
    from config import Config
    c = Config()
    mocker.patch.object(c, "load_from_yaml", return_value=None)
    return c
