import numpy as np
import pytest

from hydrocascade.core import CascadeError, objective, water_balance_residual
from hydrocascade.example import (PLANTS, PRICE, TOPOLOGY, TwoPlantExample, analytic_solution,
                                  objective_closed_form, optimal_V0, q2_profile,
                                  switching_times)
from hydrocascade.spillway import simulate_exact


def test_switching_times():
    assert switching_times(7.2) == pytest.approx((1.6, 11.2))
    assert switching_times(3.0) == (3.0, 7.0)
    for bad in (2.9, 12.0, 15.0):
        with pytest.raises(CascadeError, match="regime"):
            switching_times(bad)


def test_objective_closed_form_values():
    assert objective_closed_form(7.2) == pytest.approx(4070.4, abs=1e-9)
    assert optimal_V0() == pytest.approx(7.2, abs=1e-12)
    # the profit is a concave quadratic in V0, symmetric about 7.2
    assert objective_closed_form(6.2) == pytest.approx(objective_closed_form(8.2), abs=1e-9)
    assert objective_closed_form(7.2) > objective_closed_form(7.1)


@pytest.mark.parametrize("V0", [4.0, 6.0, 7.2, 9.0])
def test_closed_form_agrees_with_grid_objective(V0):
    u, traj, _, _ = analytic_solution(V0, 3200)
    J = objective(u, traj, PRICE, PLANTS, TOPOLOGY)
    assert J == pytest.approx(objective_closed_form(V0), abs=1e-3)


@pytest.mark.parametrize("V0", [4.0, 7.2, 9.0])
def test_analytic_solution_is_a_process(V0):
    u, traj, _, _ = analytic_solution(V0)
    u.check_admissible(PLANTS)
    assert water_balance_residual(traj, u, PLANTS, TOPOLOGY) < 1e-12
    assert traj.V[-1, 1] == pytest.approx(V0) and traj.V[0, 1] == V0
    sim = simulate_exact(TOPOLOGY, PLANTS, u, [5.0, V0])
    assert np.max(np.abs(sim.V - traj.V)) < 1e-12
    assert np.max(np.abs(sim.s - traj.s)) < 1e-12


def test_q2_profile_values():
    V0 = 7.2
    assert q2_profile(0.0, V0) == pytest.approx(-4.8)
    assert q2_profile(1.6, V0) == pytest.approx(0.0, abs=1e-12)
    assert q2_profile(8.0, V0) == 0.0
    assert q2_profile(16.0, V0) == pytest.approx(-4.8)
    assert q2_profile(15.99, V0) == pytest.approx(11.0 * (15.99 - 11.2))
    t = np.linspace(0, 15.9, 200)
    q = q2_profile(t, V0)
    assert np.all(q[t < 1.59] < 0) and np.all(q[t > 11.21] > 0)


def test_problem_factory():
    pb = TwoPlantExample().problem(64)
    assert pb.grid.n_cells == 64 and pb.grid.horizon == 16.0
    assert pb.n_plants == 2
