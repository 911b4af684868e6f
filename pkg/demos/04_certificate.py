"""
Checking optimality with multipliers
====================================

A candidate process is optimal in the sense of the maximum principle if
multipliers exist that satisfy the adjoint equation, the complementarity
and periodicity conditions, and if every control maximises its switching
function. For the two-plant example the multipliers are known; here we
build them on the grid and measure every residual.
"""

import numpy as np

from hydrocascade.example import PLANTS, PRICE, TOPOLOGY, analytic_solution, q2_profile
from hydrocascade.nco import (check_nco, normalize_multipliers, switching_function,
                              synthesize_example_multipliers)
from hydrocascade.spillway import simulate_exact

V0 = 7.2
u, _, tau1, tau2 = analytic_solution(V0, 320)
traj = simulate_exact(TOPOLOGY, PLANTS, u, [5.0, V0])
bundle = normalize_multipliers(synthesize_example_multipliers(V0, 320))

report = check_nco(bundle, traj, u, PRICE, PLANTS, TOPOLOGY)
for key, value in report.as_dict().items():
    print(f"{key:32s} {value}")
print("certificate passed:", report.passed())

# The downstream switching function is negative while pumping, vanishes on
# the singular arc at the upper bound and is positive while turbining.
sig = switching_function(bundle, traj, PRICE, PLANTS, TOPOLOGY)
scale = 1.0 / bundle.lam
for t in (0.5, 1.0, 3.0, 9.0, 12.0, 15.0):
    k = int(round(t / traj.grid.dt))
    print(f"t={t:5.1f}  sigma2={scale * sig.sigma[k, 1]:8.3f}  "
          f"closed form={q2_profile(t, V0):8.3f}  u2={u.u[k, 1]:4.1f}")

# Break the certificate: move the costate at one node.
doc = bundle.as_dict()
doc["p"][100][1] += 1e-3
bad = type(bundle).from_dict(bundle.grid, doc)
print("\nperturbed adjoint residual:", check_nco(bad, traj, u, PRICE, PLANTS, TOPOLOGY)
      .adjoint_residual)
