import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthbody.procedural import procedural_model  # noqa: E402


@pytest.fixture(scope="session")
def humanoid():
    return procedural_model(n_vertices=500)


@pytest.fixture(scope="session")
def humanoid_full():
    return procedural_model(n_vertices=600, hands=True, eyes=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
