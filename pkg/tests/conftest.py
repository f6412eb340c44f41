import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Log one acceptance verdict; the summary is printed at the end of the run."""
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append((number, f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
