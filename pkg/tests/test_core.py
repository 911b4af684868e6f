import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrocascade.core import (CascadeError, ControlTrajectory, PlantParams, PriceSignal,
                               TimeGrid, Trajectory, build_topology, constant_control,
                               constant_price, head, heads, incidence_matrix, objective,
                               water_balance_residual)
from hydrocascade.example import PLANTS, TOPOLOGY

from conftest import TREE5_EDGES


def test_tree5_topology_inflow_sets():
    top = build_topology(TREE5_EDGES, 5)
    assert top.upstream(5) == (2, 3, 4)
    assert top.upstream(3) == (1,)
    assert top.upstream(1) == ()
    assert top.downstream == (3, 5, 5, 5, None)


def test_isolated_reservoir():
    top = build_topology([], 1)
    assert top.upstream(1) == ()
    assert incidence_matrix(top).tolist() == [[0.0]]


@pytest.mark.parametrize("edges, n", [
    ([(1, 2), (1, 3)], 3),   # two downstreams
    ([(2, 1)], 2),           # flows to a lower index
    ([(1, 1)], 1),
    ([(1, 4)], 3),           # out of range
    ([(0, 1)], 2),
])
def test_build_topology_rejects(edges, n):
    with pytest.raises(CascadeError):
        build_topology(edges, n)


def test_incidence_matrix_tree5():
    M = incidence_matrix(build_topology(TREE5_EDGES, 5))
    expected = np.zeros((5, 5))
    for i, j in [(3, 1), (5, 2), (5, 3), (5, 4)]:
        expected[i - 1, j - 1] = 1
    assert np.array_equal(M, expected)


def test_incidence_matrix_chain():
    assert incidence_matrix(TOPOLOGY).tolist() == [[0, 0], [1, 0]]


@st.composite
def forests(draw):
    n = draw(st.integers(1, 8))
    edges = []
    for j in range(1, n):
        if draw(st.booleans()):
            edges.append((j, draw(st.integers(j + 1, n))))
    return n, edges


@given(forests())
def test_incidence_structure(forest):
    n, edges = forest
    M = incidence_matrix(build_topology(edges, n))
    assert set(np.unique(M)) <= {0.0, 1.0}
    assert np.all(M.sum(axis=0) <= 1)
    assert np.all(np.triu(M) == 0)  # strictly lower triangular, zero diagonal
    for j, i in edges:
        assert M[i - 1, j - 1] == 1


def test_plant_params_validation():
    with pytest.raises(CascadeError):
        PlantParams(A=1, V_min=2, V_max=2, u_min=0, u_max=1)
    with pytest.raises(CascadeError):
        PlantParams(A=1, V_min=0, V_max=2, u_min=1, u_max=0)
    with pytest.raises(CascadeError):
        PlantParams(A=1, V_min=0, V_max=2, u_min=0, u_max=1, S=0)
    with pytest.raises(CascadeError):
        PlantParams(A=-1, V_min=0, V_max=2, u_min=0, u_max=1)


def test_head_examples():
    V = np.array([5.0, 7.2])
    assert head(1, V, PLANTS, TOPOLOGY) == pytest.approx(10.8)
    assert head(2, V, PLANTS, TOPOLOGY) == pytest.approx(7.2)
    single = (PlantParams(A=0, V_min=-1, V_max=1, u_min=0, u_max=1, h=0),)
    assert head(1, np.array([0.0]), single, build_topology([], 1)) == 0.0


def test_heads_matches_head(tree5):
    top, params = tree5
    V = np.linspace(2, 6, 5)
    H = heads(V, params, top)
    assert np.allclose(H, [head(j, V, params, top) for j in range(1, 6)])


def test_head_gradient_structure(tree5):
    top, params = tree5
    V = np.full(5, 3.0)
    for j in range(1, 6):
        grad = [(head(j, V + 1e-3 * e, params, top) - head(j, V, params, top)) / 1e-3
                for e in np.eye(5)]
        d = top.downstream[j - 1]
        expected = np.zeros(5)
        expected[j - 1] = 1 / params[j - 1].S
        if d is not None:
            expected[d - 1] = -1 / params[d - 1].S
        assert np.allclose(grad, expected, atol=1e-9)


def test_time_grid_and_price_alignment():
    g = TimeGrid(16.0, 320)
    assert g.dt == pytest.approx(0.05)
    assert g.node_index(6.0) == 120
    with pytest.raises(CascadeError):
        g.node_index(6.01)
    price = PriceSignal((0.0, 6.0, 16.0), (3.0, 11.0))
    c = price.cell_values(g)
    assert c[119] == 3.0 and c[120] == 11.0
    with pytest.raises(CascadeError):
        price.cell_values(TimeGrid(16.0, 7))  # 6 is not a node
    assert price.value_at(16.0) == 11.0
    with pytest.raises(CascadeError):
        PriceSignal((1.0, 2.0), (1.0,))


def test_control_admissibility():
    g = TimeGrid(1.0, 4)
    u = constant_control(g, [2.0])
    params = (PlantParams(A=0, V_min=0, V_max=1, u_min=0, u_max=1),)
    with pytest.raises(CascadeError):
        u.check_admissible(params)
    with pytest.raises(CascadeError):
        ControlTrajectory(g, np.zeros((3, 1)))


def _single(A=1.0, S=1.0, h=0.0):
    return (PlantParams(A=A, V_min=0, V_max=10, u_min=-5, u_max=5, h=h, S=S),), build_topology([], 1)


def test_objective_trivial_cases():
    params, top = _single(h=2.0)
    g = TimeGrid(8.0, 16)
    V = np.full((17, 1), 4.0)
    tr = Trajectory(g, V, np.zeros((16, 1)))
    price = constant_price(3.0, 8.0)
    assert objective(constant_control(g, [0.0]), tr, price, params, top) == 0.0
    # constant head 4 + 2, constant u
    assert objective(constant_control(g, [1.5]), tr, price, params, top) == pytest.approx(3 * 1.5 * 6 * 8)


def test_objective_oracle(oracle, example_problem):
    u, tr, _, _ = oracle
    p = example_problem
    assert objective(u, tr, p.price, p.params, p.topology) == pytest.approx(4070.4, abs=1e-9)


def test_objective_incompatible_grids(oracle, example_problem):
    u, tr, _, _ = oracle
    other = constant_control(TimeGrid(16.0, 160), [1.0, 0.0])
    with pytest.raises(CascadeError):
        objective(other, tr, example_problem.price, PLANTS, TOPOLOGY)


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31 - 1))
def test_objective_linear_in_u(a, b, seed):
    rng = np.random.default_rng(seed)
    g = TimeGrid(16.0, 32)
    price = PriceSignal((0.0, 6.0, 16.0), (3.0, 11.0))
    tr = Trajectory(g, rng.uniform(3, 5, (33, 2)), np.zeros((32, 2)))
    u1, u2 = rng.uniform(-1, 1, (2, 32, 2))
    f = lambda u: objective(ControlTrajectory(g, u), tr, price, PLANTS, TOPOLOGY)
    assert f(a * u1 + b * u2) == pytest.approx(a * f(u1) + b * f(u2), rel=1e-9, abs=1e-9)


def test_water_balance_trivial():
    params, top = _single(A=1.0)
    g = TimeGrid(5.0, 10)
    u = constant_control(g, [1.0])
    tr = Trajectory(g, np.full((11, 1), 3.0), np.zeros((10, 1)))
    assert water_balance_residual(tr, u, params, top) == 0.0
    V = tr.V.copy()
    V[4] += 0.25
    assert water_balance_residual(Trajectory(g, V, tr.s), u, params, top) == pytest.approx(0.25)


def test_water_balance_oracle(oracle, example_problem):
    u, tr, _, _ = oracle
    assert water_balance_residual(tr, u, PLANTS, TOPOLOGY) < 1e-12


def test_trajectory_validation():
    g = TimeGrid(1.0, 2)
    with pytest.raises(CascadeError):
        Trajectory(g, np.zeros((3, 1)), -np.ones((2, 1)))
    with pytest.raises(CascadeError):
        Trajectory(g, np.full((3, 1), np.nan), np.zeros((2, 1)))
