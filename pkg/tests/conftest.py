import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from weakfind.fem import MaterialParams  # noqa: E402
from weakfind.fixtures import box_mesh, plate_with_hole, rectangle_mesh, thick_plate_with_conical_hole  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def mat():
    return MaterialParams()


@pytest.fixture(scope="session")
def plate():
    return plate_with_hole()


@pytest.fixture(scope="session")
def thick_small():
    return thick_plate_with_conical_hole(n_short=5, n_radial=3, n_layers=1)


@pytest.fixture(scope="session")
def strip():
    return rectangle_mesh(6, 4, length=6.0, width=2.0, thickness=0.5)


@pytest.fixture(scope="session")
def cube():
    return box_mesh(2, 2, 2, size=(2.0, 1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
