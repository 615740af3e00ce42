import json
import os

import pytest

from moranrate import available_backends

HERE = os.path.dirname(os.path.abspath(__file__))


@pytest.fixture(scope="session")
def oracle():
    with open(os.path.join(HERE, "oracle_values.json")) as fh:
        return json.load(fh)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
