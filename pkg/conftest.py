"""
Shared pytest configuration: project root on sys.path, the slow marker and common fixtures
"""

import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.numerics.params import ParamStore  # noqa: E402
from src.numerics.rng import make_rng  # noqa: E402

# installation check script, not a test module
collect_ignore = ["test_setup.py", "examples"]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng(request):
    return make_rng(11, request.node.name)


@pytest.fixture
def store64():
    return ParamStore(seed=3, dtype=np.float64)


@pytest.fixture
def store32():
    return ParamStore(seed=3, dtype=np.float32)
