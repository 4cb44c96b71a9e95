"""Shared fixtures and the acceptance summary printed at the end of a run."""
import pytest

ACCEPTANCE = {}  # criterion number -> (passed, detail)


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    return passed


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
