import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, float]] = {}


@pytest.fixture
def record_criterion():
    """Tests call ``record_criterion(n, title, passed, seconds)``; the summary prints one line each."""

    def record(number: int, title: str, passed: bool, seconds: float) -> None:
        _ACCEPTANCE[number] = (title, passed, seconds)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, seconds = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({seconds:.2f}s)")
