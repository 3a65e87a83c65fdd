import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(k: int, ok: bool, detail: str) -> bool:
        _LINES[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_LINES[k])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
