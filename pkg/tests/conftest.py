from __future__ import annotations

import numpy as np
import pytest

from bfcshaper.comb import make_distinct_grid, make_shared_grid


@pytest.fixture
def shared6():
    return make_shared_grid(6)


@pytest.fixture
def distinct3():
    return make_distinct_grid(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
