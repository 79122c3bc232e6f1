import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Print one PASS/FAIL line per acceptance criterion and keep it for the summary."""
    def _report(n: int, ok: bool, elapsed: float, bound: float, detail: str) -> bool:
        line = (f"AC{n:<2d} {'PASS' if ok else 'FAIL'}  {elapsed:6.1f}s/{bound:.0f}s  {detail}")
        print(line)
        _LINES.append(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
