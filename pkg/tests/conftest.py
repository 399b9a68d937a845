import numpy as np
import pytest

from occpred.occupancy import OccupancyGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_of(rows, **kw) -> OccupancyGrid:
    return OccupancyGrid(np.asarray(rows, dtype=np.uint8), **kw)


# Acceptance criteria append (line) entries here; printed at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
