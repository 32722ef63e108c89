import numpy as np
import pytest

from pemc.rng import RngStream


@pytest.fixture
def stream():
    return RngStream(20240601, 7)


def within_sigma(value, target, se, k=3.0):
    return abs(value - target) <= k * se


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; lines are repeated in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda item: item[0]):
            terminalreporter.write_line(line)
