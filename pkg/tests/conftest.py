import pytest

_CRITERIA = {}


@pytest.fixture(scope="session")
def criteria_report():
    """Collects one line per acceptance criterion for the terminal summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[key])
