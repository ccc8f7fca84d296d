import pytest

_criteria: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion; the line is repeated in the summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        _criteria[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criteria):
            terminalreporter.write_line(_criteria[number])
