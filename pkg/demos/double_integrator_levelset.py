"""Outer approximations of the double integrator basin.

Solves orders 3 to 5, writes the polynomial v(0, x) on a grid to a CSV file
for plotting, and checks the sets against the analytic minimum-time basin.

    python3 demos/double_integrator_levelset.py [out.csv]
"""

import sys

import numpy as np

from liouville_roa.cli import load_problem
from liouville_roa.relaxation import solve_relaxation
from liouville_roa.roa import (MONTE_CARLO, OuterApprox, analytic_roa_double_integrator,
                               levelset_grid, levelset_table, sample_admissible_points,
                               volume_error)
from liouville_roa.semialg import preprocess

spec, _ = load_problem("double_integrator")
scaled, smap = preprocess(spec)
box = spec.X.bounding_box()

certs = [solve_relaxation(scaled, k).certificate for k in (3, 4, 5)]
approx = OuterApprox(tuple(certs), smap)
for cert in certs:
    rep = volume_error(approx, analytic_roa_double_integrator, box, 100_000, seed=0,
                       estimator=MONTE_CARLO, k=cert.k)
    print(f"k={cert.k}: relative volume error {rep.relative_error:.3f} "
          f"(95% half-width {rep.ci_halfwidth:.3f})")

# points reached by sampled bang-bang controls must lie in every set
traj = sample_admissible_points(spec, 500, seed=1)
print("sampled basin points inside every set:",
      bool(np.all(approx.values(traj.initial_points) >= 0)))

out = sys.argv[1] if len(sys.argv) > 1 else "double_integrator_k5.csv"
table = levelset_table(certs[-1], smap, levelset_grid(box, 201))
np.savetxt(out, table, delimiter=",", header="x1,x2,v0,w", comments="")
print("wrote", out)
