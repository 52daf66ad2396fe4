"""Order sweep on the univariate cubic.

Solves the relaxation at increasing orders and prints how the bound and the
outer approximation tighten toward the true basin [-0.5, 0.5].

    python3 demos/cubic_order_sweep.py
"""

import numpy as np

from liouville_roa.cli import load_problem
from liouville_roa.relaxation import solve_relaxation
from liouville_roa.roa import RUNNING_MIN, OuterApprox, analytic_roa_cubic, volume_error
from liouville_roa.semialg import preprocess

spec, _ = load_problem("cubic")
scaled, smap = preprocess(spec)
box = spec.X.bounding_box()

certs = []
print(" k  upper bound   error   running-min error")
for k in range(2, 7):
    res = solve_relaxation(scaled, k)
    certs.append(res.certificate)
    single = volume_error(OuterApprox((res.certificate,), smap), analytic_roa_cubic, box, 20000)
    running = volume_error(OuterApprox(tuple(certs), smap, RUNNING_MIN), analytic_roa_cubic,
                           box, 20000, k=k)
    print(f"{k:2d}  {res.dual_objective:11.6f}  {single.relative_error:6.3f}  "
          f"{running.relative_error:6.3f}")

# the boundary of the order-6 set sits just outside x = +-0.5
x = np.linspace(-1, 1, 2001)[:, None]
inside = OuterApprox((certs[-1],), smap).contains(x)
print(f"k=6 set: [{x[inside].min():.4f}, {x[inside].max():.4f}]")
