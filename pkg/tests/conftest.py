import sys

import pytest

from scenarios import nominal_params


@pytest.fixture
def params():
    return nominal_params()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance.REPORT):
        terminalreporter.write_line(line)
