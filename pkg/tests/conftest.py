import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from generator import synthesize  # noqa: E402
from numerics import make_rng  # noqa: E402
from report_utils import set_quiet  # noqa: E402

TOY_DIMS = [8, 16, 32, 64, 128]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow benchmark tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: directional benchmark, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _quiet_logs(monkeypatch):
    monkeypatch.delenv("ILO_LOG_FILE", raising=False)
    set_quiet(True)
    yield


@pytest.fixture(scope="session")
def toy_generator():
    return synthesize(TOY_DIMS, "leaky_relu", 1.0, seed=0)


@pytest.fixture(scope="session")
def small_generator():
    return synthesize([3, 5, 6, 8], "leaky_relu", 1.0, seed=1)


@pytest.fixture
def rng():
    return make_rng(1234)
