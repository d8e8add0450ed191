"""Shared fixtures and the acceptance-report hook."""

import numpy as np
import pytest

from ftcgt import build_graph, exact_sequence, generate

ACCEPTANCE_LINES = {}


def record_acceptance(number: int, passed: bool, detail: str):
    """Store the pass/fail line for an acceptance criterion and echo it."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def path8():
    return build_graph("path", 8)


@pytest.fixture(scope="session")
def path8_seq(path8):
    return exact_sequence(path8)


@pytest.fixture(scope="session")
def problem8():
    return generate(8, 20, 30, 0.1, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
