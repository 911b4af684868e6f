"""Closed-form two-plant example with a permanently spilling upstream plant.

Plant 1 (A=2, V in [1,5], u in [0,1], h=13) feeds plant 2 (A=0, V in [3,12],
u in [-1,3], reversible), horizon 16, price 3 on [0,6) and 11 on [6,16).
Upstream stays full and spills 1; downstream pumps (u=-1) until full at
``tau1 = (12 - V0)/3``, holds at 12 with u=2 until ``tau2 = V0 + 4`` and then
turbines at u=3 back to V0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CascadeError, ControlTrajectory, PlantParams, PriceSignal, TimeGrid,
                   Trajectory, build_topology)
from .ocp import CascadeProblem

HORIZON = 16.0
PRICE = PriceSignal((0.0, 6.0, 16.0), (3.0, 11.0))
PLANTS = (
    PlantParams(A=2.0, V_min=1.0, V_max=5.0, u_min=0.0, u_max=1.0, h=13.0, S=1.0),
    PlantParams(A=0.0, V_min=3.0, V_max=12.0, u_min=-1.0, u_max=3.0, h=0.0, S=1.0),
)
TOPOLOGY = build_topology([(1, 2)], 2)


@dataclass(frozen=True)
class TwoPlantExample:
    horizon: float = HORIZON
    price: PriceSignal = PRICE
    params: tuple[PlantParams, ...] = PLANTS
    topology = TOPOLOGY

    def problem(self, n_cells: int = 320) -> CascadeProblem:
        return CascadeProblem(self.topology, self.params, self.price,
                              TimeGrid(self.horizon, n_cells))


def _check_regime(V0: float):
    if not 3.0 <= V0 < 12.0:
        raise CascadeError(f"V0={V0} outside the analysed regime [3, 12)")


def switching_times(V0: float) -> tuple[float, float]:
    """(tau1, tau2): arrival at and departure from the upper bound."""
    _check_regime(V0)
    return (12.0 - V0) / 3.0, V0 + 4.0


def downstream_control(t, V0: float) -> np.ndarray:
    tau1, tau2 = switching_times(V0)
    t = np.asarray(t, dtype=float)
    return np.where(t < tau1, -1.0, np.where(t <= tau2, 2.0, 3.0))


def downstream_volume(t, V0: float) -> np.ndarray:
    tau1, tau2 = switching_times(V0)
    t = np.asarray(t, dtype=float)
    return np.where(t < tau1, V0 + 3.0 * t,
                    np.where(t <= tau2, 12.0, 12.0 - (t - tau2)))


def _cell_average(f, grid: TimeGrid, V0: float, breaks) -> np.ndarray:
    """Exact cell averages of a piecewise-polynomial (deg <= 1) profile."""
    nodes = grid.nodes
    out = np.empty(grid.n_cells)
    for k in range(grid.n_cells):
        a, b = nodes[k], nodes[k + 1]
        pts = [a] + [x for x in breaks if a < x < b] + [b]
        total = 0.0
        for x0, x1 in zip(pts, pts[1:]):
            mid = 0.5 * (x0 + x1)
            total += f(mid, V0) * (x1 - x0)
        out[k] = total / (b - a)
    return out


def analytic_solution(V0: float, n_cells: int = 320):
    """Optimal-form process for a given periodic level ``V0`` of plant 2.

    Returns ``(control, trajectory, tau1, tau2)``; controls are exact cell
    averages of the bang-singular-bang profile.
    """
    tau1, tau2 = switching_times(V0)
    grid = TimeGrid(HORIZON, n_cells)
    nodes = grid.nodes
    u2 = _cell_average(downstream_control, grid, V0, (tau1, tau2))
    u = np.column_stack([np.ones(n_cells), u2])
    V = np.column_stack([np.full(n_cells + 1, 5.0), downstream_volume(nodes, V0)])
    V_mean = np.column_stack([np.full(n_cells, 5.0),
                              _cell_average(downstream_volume, grid, V0, (tau1, tau2))])
    s = np.column_stack([np.ones(n_cells), np.zeros(n_cells)])
    return ControlTrajectory(grid, u), Trajectory(grid, V, s, V_mean), tau1, tau2


def objective_closed_form(V0: float) -> float:
    """Profit of :func:`analytic_solution`, piece by piece.

    On [0,tau1] the integrand is 3(18 - 2 V2), on [tau1,6] it is 3*30, on
    [6,tau2] 11*30 and on [tau2,16] 11(18 + 2 V2) with V2 falling at unit rate.
    """
    tau1, tau2 = switching_times(V0)
    # int_0^tau1 3 (18 - 2 (V0 + 3 t)) dt
    p1 = 3.0 * (18.0 * tau1 - 2.0 * V0 * tau1 - 3.0 * tau1 ** 2)
    p2 = 90.0 * (6.0 - tau1)
    p3 = 330.0 * (tau2 - 6.0)
    # V2 = 12 - r with r = t - tau2 on [0, L]; integrand 11 (42 - 2 r)
    L = HORIZON - tau2
    p4 = 11.0 * (42.0 * L - L ** 2)
    return p1 + p2 + p3 + p4


def optimal_V0() -> float:
    """Maximiser of the quadratic :func:`objective_closed_form`: 36/5."""
    # profit(V0) = a V0^2 + b V0 + c exactly; recover a, b from three samples
    f0, f1, f2 = (objective_closed_form(v) for v in (4.0, 6.0, 8.0))
    a = (f2 - 2 * f1 + f0) / 8.0
    b = (f1 - f0) / 2.0 - a * 10.0
    return -b / (2 * a)


def q2_profile(t, V0: float):
    """Downstream switching function ``Q2 = c V2 - p2`` of the example."""
    tau1, tau2 = switching_times(V0)
    t = np.asarray(t, dtype=float)
    out = np.where(t <= tau1, -(12.0 - V0) + 3.0 * t,
                   np.where(t <= tau2, 0.0, 11.0 * (t - tau2)))
    out = np.where(t >= HORIZON, -(12.0 - V0), out)
    return out if out.ndim else float(out)
