"""
A two-plant cascade with a closed-form answer
=============================================

The upstream plant receives more water than it can turbine, so it stays
full and spills. The downstream plant is reversible: it pumps while power
is cheap, holds at its upper bound and then turbines when the price is high.
For a given periodic level V0 of the lower reservoir the whole process is
known in closed form, and the profit is a concave quadratic in V0.
"""

import numpy as np

from hydrocascade.core import objective
from hydrocascade.example import (PLANTS, PRICE, TOPOLOGY, analytic_solution,
                                  objective_closed_form, optimal_V0, switching_times)
from hydrocascade.spillway import simulate_exact

# The profit as a function of the periodic level.
for V0 in (4.0, 6.0, 7.2, 9.0, 11.0):
    tau1, tau2 = switching_times(V0)
    print(f"V0={V0:5.2f}  tau1={tau1:5.2f}  tau2={tau2:5.2f}  "
          f"profit={objective_closed_form(V0):9.3f}")

V0 = optimal_V0()
print(f"\nbest periodic level {V0:.4f}, profit {objective_closed_form(V0):.4f}")

# Build the optimal control on a grid of 320 cells and run it through the
# exact (event driven) simulator. The simulator decides the spill itself.
u, oracle, tau1, tau2 = analytic_solution(V0, 320)
traj = simulate_exact(TOPOLOGY, PLANTS, u, [5.0, V0])
print("max |V - V_oracle| =", np.max(np.abs(traj.V - oracle.V)))
print("upstream spill range:", traj.s[:, 0].min(), traj.s[:, 0].max())
print("downstream spill max:", traj.s[:, 1].max())
print("profit on the grid  :", objective(u, traj, PRICE, PLANTS, TOPOLOGY))

# A coarse look at the lower reservoir over the day.
for t in (0.0, 1.6, 6.0, 11.2, 14.0, 16.0):
    k = int(round(t / traj.grid.dt))
    print(f"t={t:5.1f}  V2={traj.V[k, 1]:6.3f}")
