import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("natstar", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("natstar")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
