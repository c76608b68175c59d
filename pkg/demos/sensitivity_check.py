"""
Checking topological sensitivities against finite differences
=============================================================

The optimizer ranks elements by how much a quantity of interest changes when
the element is removed.  Those rankings come from adjoint solves.  Here we
compare them with brute-force central differences on a small cantilever,
first with a uniform temperature rise and then with a left/right
temperature difference that requires a thermal solve.
"""

import numpy as np

from thermotop import qoi
from thermotop.checks import check_design, check_model, tip_dof
from thermotop.fea import analyze
from thermotop.sensitivity import finite_difference_sensitivity, raw_sensitivity, solve_adjoints

for mode in ("uniform", "dirichlet"):
    model = check_model(mode)
    solid = check_design(model, n_void=6, seed=0)
    fields = analyze(model, solid)
    print(f"\n{mode} temperature field, {int(solid.sum())} solid elements")

    # Three quantities: compliance, the tip deflection and the p-norm of the
    # von Mises stress (p = 6).
    for q in (qoi.Compliance(), qoi.PointDisplacement(tip_dof(model)), qoi.PNormStress(6.0)):
        adjoints = solve_adjoints(q, model, fields, shortcut=False)
        adjoint_values = raw_sensitivity(q, model, fields, adjoints)

        # Finite differences soften one element by +-1e-4 and re-solve twice.
        elements = np.flatnonzero(solid)[:8]
        fd = np.array([finite_difference_sensitivity(q, model, solid, int(e)) for e in elements])
        rel = np.abs(adjoint_values[elements] - fd) / np.abs(fd)
        print(f"  {q.name:12s} worst relative error over {elements.size} elements: {rel.max():.1e}")

# The same check runs from the command line: ``thermotop verify``.
