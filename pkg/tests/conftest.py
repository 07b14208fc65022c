import numpy as np
import pytest

from coopuwb.fileio import parse_scenario
from coopuwb import reference_scenario_path

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_scenario():
    return parse_scenario(reference_scenario_path())


@pytest.fixture
def record():
    """Record one acceptance-criterion outcome for the end-of-run report."""
    def _record(name: str, passed: bool, detail: str = "") -> None:
        _CRITERIA.append((name, bool(passed), detail))
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
