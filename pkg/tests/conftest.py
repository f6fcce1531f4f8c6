import sys

import numpy as np
import pytest

from ampgnn.system import draw_batch, make_constellation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def qpsk():
    return make_constellation(4)


def random_batch(count, M, N, Q=4, snr_db=10.0, seed=0):
    const = make_constellation(Q)
    batch, _ = draw_batch(count, M, N, const, snr_db, np.random.default_rng(seed))
    return const, batch


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
