import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, ok, detail)`` for the end-of-run acceptance summary."""

    def record(number, ok, detail):
        _VERDICTS[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
