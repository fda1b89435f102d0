import pytest

_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line: ``verdict(number, passed, detail)``."""
    def record(number, passed, detail):
        _VERDICTS.append((number, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
