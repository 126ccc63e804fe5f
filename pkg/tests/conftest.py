import pytest

_criteria = {}


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome, then assert it."""

    def record(number, title, ok, detail=""):
        _criteria[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, detail = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
