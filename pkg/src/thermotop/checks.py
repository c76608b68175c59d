"""Self-checks of the sensitivity pipeline against finite differences.

Used by ``thermotop verify`` and the test suite.  The check model is a small
cantilever (6 x 4 x 2 elements) clamped at ``x = 0`` with a tip load, a few
void elements, and either a uniform temperature change or left/right
prescribed temperatures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qoi as q
from .fea import FEModel, SolverSettings, analyze
from .grid import BoundaryConditions, Dirichlet, MaterialModel, UniformDelta, build_grid
from .sensitivity import finite_difference_sensitivity, raw_sensitivity, solve_adjoints

THERMAL_MODES = ("uniform", "dirichlet")


@dataclass
class CheckResult:
    mode: str
    qoi: str
    n_elements: int
    max_relative: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative <= self.tolerance


def check_model(mode: str = "uniform", material: MaterialModel | None = None, tol: float = 1e-13) -> FEModel:
    grid = build_grid((0.06, 0.04, 0.02), (6, 4, 2))
    clamped = grid.select_nodes({0: 0.0})
    fixed = (3 * clamped[:, None] + np.arange(3)).ravel()
    tip = grid.select_nodes({0: 0.06, 1: 0.0})
    loads = [(int(n), np.array([0.0, -1e4 / tip.size, 0.0])) for n in tip]
    if mode == "uniform":
        thermal = UniformDelta(10.0)
    elif mode == "dirichlet":
        right = grid.select_nodes({0: 0.06})
        thermal = Dirichlet(np.r_[clamped, right], np.r_[np.full(clamped.size, 23.0), np.full(right.size, 63.0)])
    else:
        raise ValueError(f"unknown thermal mode {mode!r}")
    return FEModel(grid, material or MaterialModel(), BoundaryConditions(fixed, loads, thermal=thermal), SolverSettings(tol=tol))


def check_design(model: FEModel, n_void: int = 6, seed: int = 0) -> np.ndarray:
    """Mostly solid design with ``n_void`` random holes away from supports and loads."""
    grid = model.grid
    rng = np.random.default_rng(seed)
    keep = grid.elements_touching(np.r_[model.bc.anchor_nodes(), model.bc.loaded_nodes(grid)])
    solid = np.ones(grid.n_elements, dtype=bool)
    solid[rng.choice(np.flatnonzero(~keep), n_void, replace=False)] = False
    return solid


def tip_dof(model: FEModel) -> int:
    node = model.grid.select_nodes({0: 0.06, 1: 0.0})[0]
    return 3 * int(node) + 1


def fd_sensitivity_suite(
    n_elements: int = 30, seed: int = 0, eps: float = 1e-4, tolerance: float = 0.02
) -> list[CheckResult]:
    """Adjoint sensitivities vs central differences for every QoI and thermal mode."""
    results = []
    for mode in THERMAL_MODES:
        model = check_model(mode)
        solid = check_design(model, seed=seed)
        fields = analyze(model, solid)
        rng = np.random.default_rng(seed + 1)
        elems = rng.choice(np.flatnonzero(solid), min(n_elements, int(solid.sum())), replace=False)
        for qoi in (q.Compliance(), q.PointDisplacement(tip_dof(model)), q.PNormStress(6.0)):
            adj = solve_adjoints(qoi, model, fields, shortcut=False)
            raw = raw_sensitivity(qoi, model, fields, adj)
            worst = 0.0
            for e in elems:
                fd = finite_difference_sensitivity(qoi, model, solid, int(e), eps)
                worst = max(worst, abs(raw[e] - fd) / max(abs(fd), 1e-300))
            results.append(CheckResult(mode, qoi.name, int(elems.size), float(worst), tolerance))
    return results
