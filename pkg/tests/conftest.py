import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """record(number, ok, detail) stores one verdict line per acceptance criterion."""

    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
