import numpy as np
import pytest

from cmaflow.grid import PeriodicGrid
from cmaflow.operator import ProblemData, chi_u, density_ratio


def flat_data(grid, chi_scale=2.0, psi=1.0, alpha=1):
    I = grid.constant_matrix(np.eye(grid.n))
    return ProblemData(grid, alpha, I, chi_scale * I, psi)


def manufactured_u(grid, amp=0.3):
    """amp / (2 pi^2) (sin 2 pi x1 + cos 2 pi x3), broadcast to the grid."""
    x = grid.coords()
    u = amp / (2 * np.pi ** 2) * (np.sin(2 * np.pi * x[0]) + np.cos(2 * np.pi * x[2]))
    return np.broadcast_to(u, grid.shape).copy()


def manufactured_data(grid, amp=0.3):
    base = flat_data(grid)
    u = manufactured_u(grid, amp)
    return base.with_psi(density_ratio(base, chi_u(base, u))), u


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid2d():
    return PeriodicGrid(2, (16, 1, 16, 1), (1.0,) * 4)


@pytest.fixture
def grid4d():
    return PeriodicGrid.uniform(2, 8)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
