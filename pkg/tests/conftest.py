"""
Shared pytest fixtures for all tests.
"""
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def load_fixture(name: str) -> Dict[str, Any]:
    """Load a JSON experiment document from tests/fixtures."""
    with open(FIXTURES_DIR / name, "r", encoding="utf-8") as f:
        return json.load(f)


# ==================== Experiment Documents ====================

@pytest.fixture
def minimal_config_data() -> Dict[str, Any]:
    """n=2, white gaussian input, one sample size."""
    return load_fixture("minimal.json")


@pytest.fixture
def ar1_config_data() -> Dict[str, Any]:
    """n=3 driven by ar1(0.5) with uniform noise and a kernel list."""
    return load_fixture("ar1_kernels.json")


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment document to a temp file and return its path."""
    def _write(data: Dict[str, Any], name: str = "experiment.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path
    return _write


# ==================== Domain Objects ====================

@pytest.fixture
def gaussian():
    from signals import InnovationSpec
    return InnovationSpec.gaussian(1.0)


@pytest.fixture
def white():
    from signals import white_filter
    return white_filter()


@pytest.fixture
def small_dataset(white, gaussian):
    """One n=3, N=150 dataset (inside the N x N form range)."""
    from signals import generate_dataset
    return generate_dataset(np.array([1.0, 0.5, -0.25]), white, gaussian, gaussian, 150, master_seed=7, rep=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Temporary default output directory patched into config and cli."""
    import cli
    import config

    out = tmp_path / "output"
    monkeypatch.setenv("FIRLAB_OUTPUT_DIR", str(out))
    monkeypatch.setattr(config, "OUTPUT_DIR", out)
    monkeypatch.setattr(cli, "OUTPUT_DIR", out)
    return out


# ==================== Markers ====================

def pytest_collection_modifyitems(config, items):
    """Skip slow Monte Carlo acceptance runs unless FIRLAB_RUN_SLOW is set."""
    if os.environ.get("FIRLAB_RUN_SLOW"):
        return
    skip_slow = pytest.mark.skip(reason="set FIRLAB_RUN_SLOW=1 to run Monte Carlo acceptance tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
