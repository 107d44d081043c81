import numpy as np
import pytest

from halfvolume.grid import TorusGrid, mollify
from halfvolume.potentials import build_glued_quartic


@pytest.fixture(scope="session")
def pot():
    return build_glued_quartic()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


def smooth_random(grid: TorusGrid, rng, amp: float = 1.0, eta: float = 0.08):
    """Smooth random field with max |u| = amp."""
    u = mollify(grid.field(rng.standard_normal(grid.shape)), eta)
    return grid.field(amp * u.values / u.max_abs())


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
