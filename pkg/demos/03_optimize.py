"""
Solving the cascade by continuation
===================================

The optimiser never sees the closed form. It works on the penalised
problem and tightens it stage by stage: the stiffness gamma grows, the
periodicity slack epsilon and the proximal weight alpha shrink. Every stage
is resimulated with the exact spillway and the best admissible answer is
kept.
"""

import time

import numpy as np

from hydrocascade.example import TwoPlantExample, objective_closed_form, optimal_V0
from hydrocascade.nco import level_crossings
from hydrocascade.ocp import SolverSchedule, solve_continuation

problem = TwoPlantExample().problem(320)
schedule = SolverSchedule()
print(f"{len(schedule.stages())} stages, gamma up to {schedule.gamma_max:g}")

t0 = time.perf_counter()
rep = solve_continuation(problem, schedule)
print(f"solved in {time.perf_counter() - t0:.1f} s")

print("\n  gamma      eps    alpha    exact profit   incumbent   iters")
for st in rep.stages[::4] + rep.stages[-1:]:
    print(f"{st.gamma:7.0f}  {st.epsilon:7.0e}  {st.alpha:7.0e}  {st.exact_profit:12.4f}"
          f"  {st.incumbent_profit:10.4f}  {st.iterations:6d}")

best = objective_closed_form(optimal_V0())
print(f"\nV(0) = {np.round(rep.decision.V0, 5)}, profit {rep.exact_objective:.4f} "
      f"(closed form {best:.4f})")
t1, t2 = level_crossings(rep.control.u[:, 1], problem.grid, (0.5, 2.5))
print(f"downstream switches at {t1:.3f} and {t2:.3f}")
print("upstream control range", rep.control.u[:, 0].min(), rep.control.u[:, 0].max())
