import sys

import numpy as np
import pytest

from headrank import _backend


@pytest.fixture(params=_backend.available())
def backend(request):
    with _backend.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
