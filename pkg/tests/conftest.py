import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import single_zone_scenario, toy_scenario  # noqa: E402

from eriver.scenario import build_stylized_scenario  # noqa: E402


@pytest.fixture(scope="session")
def uniform_cfg():
    return build_stylized_scenario("uniform")


@pytest.fixture
def toy():
    return toy_scenario(2)


@pytest.fixture
def toy3():
    return toy_scenario(3, capacity=4)


@pytest.fixture
def single_zone():
    return single_zone_scenario


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
