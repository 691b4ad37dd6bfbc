"""How the cone condition controls the continuity construction.

For chi = lam * omega on a 2-dimensional torus with alpha = 1 the cone
condition reduces to lam > psi / 2. As lam approaches that threshold the
room delta above max(psi, phi_sub) closes, and the continuity method can
no longer build its starting density.
"""
import numpy as np

from cmaflow import PeriodicGrid, ProblemData
from cmaflow.continuity import ContinuityError, build_psi0
from cmaflow.hermitian import cone_condition

grid = PeriodicGrid.uniform(2, 2)
I = grid.constant_matrix(np.eye(2))
print(f"{'lam':>8s} {'margin':>10s} {'delta':>12s}")
for lam in (3.0, 1.0, 0.7, 0.55, 0.51, 0.501, 0.5):
    data = ProblemData(grid, 1, I, lam * I, 1.0)
    rep = cone_condition(data.chi, data.omega, data.psi, 1)
    try:
        _, delta = build_psi0(data)
        shown = f"{delta:12.6f}"
    except ContinuityError:
        shown = f"{'none':>12s}"
    print(f"{lam:8.3f} {rep.margin:10.6f} {shown}")

# With alpha = n = 2 the condition is vacuous and delta is capped instead.
data = ProblemData(grid, 2, I, 0.1 * I, 1.0)
print("alpha = n, lam = 0.1: delta =", build_psi0(data)[1])
