import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from margin_scenario import Domain, circle_chain
from margin_scenario.harness import fig1_scenarios

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def circle():
    return circle_chain()


@pytest.fixture
def box2():
    return Domain.box([-2.0, -2.0], [2.0, 2.0])


@pytest.fixture
def fig1_thetas():
    return fig1_scenarios()


def unit(deg):
    a = np.radians(deg)
    return np.array([np.cos(a), np.sin(a)])


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
