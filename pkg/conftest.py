"""
Shared pytest setup: make the in-tree package importable and expose the
fixture directory.
"""

import os
import sys
from pathlib import Path

import pytest

# Add the python directory to the path
current_dir = os.path.dirname(os.path.abspath(__file__))
python_dir = os.path.join(current_dir, 'python')
sys.path.insert(0, python_dir)

# headless figure rendering
os.environ.setdefault("MPLBACKEND", "Agg")

FIXTURES = Path(current_dir) / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
