import numpy as np
import pytest

from nlheat import FlowSpec, TorusGrid


def perturbed(grid, amp=0.1, mode=1):
    return grid.sample(lambda x: 1.0 + amp * np.sin(2 * np.pi * mode * x))


@pytest.fixture
def line64():
    return TorusGrid.line(64)


@pytest.fixture
def line128():
    return TorusGrid.line(128)


@pytest.fixture
def linear_free(line128):
    return FlowSpec.linear(perturbed(line128))


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
