import numpy as np
import pytest

from hydrocascade.core import PlantParams, TimeGrid, build_topology, constant_price
from hydrocascade.example import TwoPlantExample, analytic_solution, optimal_V0
from hydrocascade.ocp import CascadeProblem

TREE5_EDGES = [(1, 3), (2, 5), (3, 5), (4, 5)]


def tree5_params():
    return tuple(PlantParams(A=0.5 + 0.1 * i, V_min=1.0, V_max=6.0 + i, u_min=-0.5,
                             u_max=1.5 + 0.2 * i, h=10.0 - 2 * i, S=1.0 + 0.25 * i)
                 for i in range(5))


def random_problem(kind: str, n_cells: int = 24, horizon: float = 4.0) -> CascadeProblem:
    """Small problems for derivative checks: isolated plant, chain, five-plant tree."""
    grid = TimeGrid(horizon, n_cells)
    if kind == "isolated":
        top = build_topology([], 1)
        params = (PlantParams(A=1.0, V_min=1.0, V_max=4.0, u_min=-0.5, u_max=2.0, h=3.0, S=1.5),)
    elif kind == "chain":
        top = build_topology([(1, 2)], 2)
        params = (PlantParams(A=2.0, V_min=1.0, V_max=5.0, u_min=0.0, u_max=1.0, h=13.0),
                  PlantParams(A=0.0, V_min=3.0, V_max=12.0, u_min=-1.0, u_max=3.0))
    elif kind == "tree5":
        top = build_topology(TREE5_EDGES, 5)
        params = tree5_params()
    else:
        raise ValueError(kind)
    from hydrocascade.core import PriceSignal
    price = PriceSignal((0.0, horizon / 2, horizon), (3.0, 7.0))
    return CascadeProblem(top, params, price, grid)


@pytest.fixture(scope="session")
def example_problem():
    return TwoPlantExample().problem(320)


@pytest.fixture(scope="session")
def oracle():
    """(control, trajectory, tau1, tau2) at the optimal periodic level."""
    return analytic_solution(optimal_V0(), 320)


@pytest.fixture(scope="session")
def tree5():
    return build_topology(TREE5_EDGES, 5), tree5_params()
