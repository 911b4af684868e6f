"""Cascades of hydro plants with uncontrolled spillways: simulation,
periodic profit maximisation and optimality-condition checks."""
from .core import (CascadeError, CascadeTopology, ControlTrajectory, PlantParams,
                   PriceSignal, TimeGrid, Trajectory, build_topology, constant_control,
                   constant_price, head, incidence_matrix, objective,
                   water_balance_residual)
from .spillway import (PenaltyConfig, SimulationError, SweepReport, gamma_sweep,
                       penalty_spill, simulate_exact, simulate_penalty)
from .ocp import (CascadeProblem, DecisionVector, SolverSchedule, SolveReport,
                  extract_spillway, gradient, penalized_objective, periodicity_term,
                  solve_continuation, solve_inner)

__version__ = "0.1.0"
