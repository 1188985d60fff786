"""Collects the acceptance-criterion lines and repeats them at the end of the run."""
import pytest

_LINES = []


@pytest.fixture
def criterion():
    """``criterion(label, title, ok, detail)`` records and prints one PASS/FAIL line."""

    def record(label, title, ok, detail=""):
        line = f"CRITERION {label:<4} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
