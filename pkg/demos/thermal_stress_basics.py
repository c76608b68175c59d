"""
Thermal stress in a single voxel
================================

A steel cube that is heated but cannot expand develops a hydrostatic
compressive stress.  The same cube resting on a statically determinate
support expands freely and carries no stress at all.  Both cases have
closed-form answers, so they make a good first look at the solver.
"""

import numpy as np

from thermotop.fea import FEModel, analyze
from thermotop.grid import BoundaryConditions, DesignState, MaterialModel, UniformDelta, build_grid

# One 1 cm voxel of the default material (E = 200 GPa, nu = 0.3,
# alpha = 1.2e-5 1/C) warmed by 10 C.
grid = build_grid((0.01, 0.01, 0.01), (1, 1, 1))
material = MaterialModel()
design = DesignState(np.ones(1, dtype=bool), np.zeros(1, dtype=bool))

# Fully clamped: every displacement is zero, so the whole thermal strain
# turns into stress.  Analytically sigma = -E alpha dt / (1 - 2 nu).
clamped = BoundaryConditions(np.arange(grid.n_dofs), [], thermal=UniformDelta(10.0))
fields = analyze(FEModel(grid, material, clamped), design)
expected = -material.E * material.alpha * 10.0 / (1 - 2 * material.nu)
print("clamped stress (Pa):", fields.stress[0].round(1))
print("analytic normal stress (Pa):", expected)

# Statically determinate support: pin one corner, stop two rotations with
# two more DOFs.  Now the cube expands freely and the stress vanishes.
corner = 0
fixed = [3 * corner, 3 * corner + 1, 3 * corner + 2, 3 * 1 + 1, 3 * 1 + 2, 3 * 2 + 2]
free_support = BoundaryConditions(np.array(fixed), [], thermal=UniformDelta(10.0))
fields = analyze(FEModel(grid, material, free_support), design)
print("free expansion, max |stress| (Pa):", np.abs(fields.stress).max())

# Each edge grows by alpha * dt * L = 1.2e-6 m.
far = grid.select_nodes({0: 0.01, 1: 0.01, 2: 0.01})[0]
print("far-corner displacement (m):", fields.d[3 * far : 3 * far + 3])
