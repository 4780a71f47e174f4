import math
import os

os.environ.setdefault("NUMBA_DISABLE_TBB", "1")

import pytest
from hypothesis import settings

from cyldmc.analytic_cgf import CylinderEnvironment, CylPoint

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

UM = 1e-6
D = 1e-9
RHO_C = 5 * UM
SOURCE = CylPoint(3 * UM, 0.0, 0.0)
# receiver / observation point used for the boundary and BER scenarios
PROBE = CylPoint(2 * UM, 5 * UM, math.pi / 2)
V_FLOW = 65 * UM
K_F_PARTIAL = 100 * UM


@pytest.fixture
def reflective():
    return CylinderEnvironment(RHO_C, D)


# acceptance criteria report one line each; the lines are repeated in the
# terminal summary so they are visible even when output is captured
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
