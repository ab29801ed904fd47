import numpy as np
import pytest

from hyperbeam.grid import GridSpec

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def small_grid():
    """181 x 181 cells of 1 mm: fits the 6 cm disk and a 7 cm ring."""
    return GridSpec(nx=181, ny=181, dx=1e-3, dy=1e-3)


@pytest.fixture
def tiny_grid():
    return GridSpec(nx=41, ny=41, dx=1e-3, dy=1e-3, pml_thickness=8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
