import numpy as np
import pytest

from thermotop.fea import FEModel, SolverSettings
from thermotop.grid import BoundaryConditions, MaterialModel, UniformDelta, build_grid


# One "PASS <criterion>: <detail>" or "FAIL ..." line per acceptance test,
# repeated in the terminal summary so the verdicts are visible without -s.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def clamped_dofs(grid, axis=0, coord=0.0):
    nodes = grid.select_nodes({axis: coord})
    return (3 * nodes[:, None] + np.arange(3)).ravel()


def cantilever(res=(4, 2, 2), dims=(0.04, 0.02, 0.02), dt=0.0, load=-1e3, material=None, tol=1e-12):
    grid = build_grid(dims, res)
    tip = grid.select_nodes({0: dims[0], 1: 0.0})
    loads = [(int(n), np.array([0.0, load / tip.size, 0.0])) for n in tip] if load else []
    bc = BoundaryConditions(clamped_dofs(grid), loads, thermal=UniformDelta(dt))
    return FEModel(grid, material or MaterialModel(), bc, SolverSettings(tol=tol))


def brute_force_matrix(grid, Ke, which, weights=None):
    """Dense global matrix assembled element by element from grid positions."""
    nx, ny, nz = grid.shape
    per_node = 3 if which == "structural" else 1
    n = per_node * grid.n_nodes
    K = np.zeros((n, n))
    corners = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    e = 0
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                w = 1.0 if weights is None else weights[e]
                e += 1
                nodes = [(i + a) + (nx + 1) * ((j + b) + (ny + 1) * (k + c)) for a, b, c in corners]
                dofs = [per_node * nd + d for nd in nodes for d in range(per_node)]
                K[np.ix_(dofs, dofs)] += w * Ke
    return K


@pytest.fixture
def small_model():
    return cantilever()
