import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def record_acceptance(request):
    def _record(line: str):
        request.config._acceptance_lines.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
