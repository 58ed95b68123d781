import pytest

_RESULTS = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line per acceptance criterion."""
    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _RESULTS.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_RESULTS):
        terminalreporter.write_line(line)
