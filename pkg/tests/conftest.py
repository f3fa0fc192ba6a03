import numpy as np
import pytest

from gridtrack.grid_model import build_network, load_network
from gridtrack.sim.scenario import bundled_dir


def two_bus_desc(r=0.01, x=0.01):
    return {
        "name": "two-bus",
        "base": {"s_kva": 100.0, "v_v": 400.0},
        "limits": {"v_min": 0.9, "v_max": 1.1, "s_max_kva": 250.0},
        "buses": [{"id": "S", "type": "slack"}, {"id": "B"}],
        "lines": [{"from": "S", "to": "B", "r": r, "x": x, "ampacity": 2.0}],
    }


def feeder_desc(n=4, r=0.02, x=0.01):
    """Slack plus ``n`` buses in a chain."""
    buses = [{"id": "S", "type": "slack"}] + [{"id": f"N{i}"} for i in range(1, n + 1)]
    lines = [
        {"from": "S" if i == 1 else f"N{i - 1}", "to": f"N{i}", "r": r, "x": x, "ampacity": 2.0}
        for i in range(1, n + 1)
    ]
    return {
        "name": "feeder",
        "base": {"s_kva": 100.0, "v_v": 400.0},
        "limits": {"v_min": 0.9, "v_max": 1.1, "s_max_kva": 250.0},
        "buses": buses,
        "lines": lines,
    }


@pytest.fixture
def two_bus():
    return build_network(two_bus_desc())


@pytest.fixture
def feeder():
    return build_network(feeder_desc())


@pytest.fixture(scope="session")
def ell():
    return load_network(bundled_dir() / "day1" / "network.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
