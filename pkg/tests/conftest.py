import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Print and remember one PASS/FAIL line per acceptance criterion."""

    def record(num: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {num:>2}  {title}: {detail}"
        print(line)
        _CRITERIA[num] = line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[num])
