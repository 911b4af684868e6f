"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even
under output capture).
"""
import json
import math
import time

import numpy as np
import pytest

from hydrocascade.cli import dispatch, parse_config
from hydrocascade.core import (ControlTrajectory, PlantParams, TimeGrid, build_topology,
                               incidence_matrix, param_arrays, water_balance_residual)
from hydrocascade.example import (PLANTS, PRICE, TOPOLOGY, analytic_solution,
                                  objective_closed_form, optimal_V0, switching_times)
from hydrocascade.nco import (check_nco, level_crossings, normalize_multipliers,
                              synthesize_example_multipliers)
from hydrocascade.ocp import (Anchor, DecisionVector, gradient, penalized_objective,
                              random_initial_guess)
from hydrocascade.spillway import (PenaltyConfig, gamma_sweep, penalty_threshold,
                                   simulate_exact, simulate_penalty)

from conftest import TREE5_EDGES, tree5_params, random_problem

BUNDLED = "bundled:two_plant"


def verdict(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def optimize_runs(tmp_path_factory):
    """Two identical `optimize` runs on the bundled example config."""
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"optimize{k}")
        t0 = time.perf_counter()
        code = dispatch(["optimize", "--config", BUNDLED, "--out", str(out)])
        runs.append((code, out, time.perf_counter() - t0))
    return runs


def _load_run(out):
    rep = json.loads((out / "report.json").read_text())
    table = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    return rep, table


def test_criterion_1_example_optimum(optimize_runs, capsys):
    code, out, elapsed = optimize_runs[0]
    rep, table = _load_run(out)
    grid = TimeGrid(16.0, 320)
    V2 = rep["V0"][1]
    t1, t2 = level_crossings(table[:-1, 4], grid, (0.5, 2.5))
    tau1, tau2 = switching_times(7.2)
    best = objective_closed_form(optimal_V0())
    rel = abs(rep["objective"] - best) / best
    ok = (code == 0 and abs(V2 - 7.2) <= 0.05 and abs(t1 - tau1) <= 0.1 + 1e-12
          and abs(t2 - tau2) <= 0.1 + 1e-12 and rel <= 5e-3 and elapsed <= 60.0)
    verdict(capsys, "1 example optimum", ok,
            f"V2(0)={V2:.5f}, switches {t1:.3f}/{t2:.3f}, profit {rep['objective']:.4f} "
            f"vs {best:.4f} ({100 * rel:.4f}% off), {elapsed:.1f} s")


def test_criterion_2_saturated_upstream(optimize_runs, capsys):
    _, out, _ = optimize_runs[0]
    _, table = _load_run(out)
    V1, u1, s1, s2 = table[:, 1], table[:-1, 3], table[:-1, 5], table[:-1, 6]
    eu, es, eV = (float(np.max(np.abs(x))) for x in (u1 - 1, s1 - 1, V1 - 5))
    s2max = float(np.max(np.abs(s2)))
    ok = eu <= 1e-3 and es <= 2e-2 and eV <= 1e-6 and s2max == 0.0
    verdict(capsys, "2 saturated upstream", ok,
            f"max|u1-1|={eu:.1e}, max|s1-1|={es:.1e}, max|V1-5|={eV:.1e}, max|s2|={s2max:.1e}")


def test_criterion_3_penalty_convergence(oracle, capsys):
    u, _, _, _ = oracle
    sweep = gamma_sweep(TOPOLOGY, PLANTS, u, [5.0, optimal_V0()], [25, 50, 100, 200])
    e = sweep.sup_errors
    mono = all(b <= 1.1 * a for a, b in zip(e, e[1:]))
    # single plant above the explicit threshold: no overshoot
    top = build_topology([], 1)
    params = (PlantParams(A=2.0, V_min=0.0, V_max=4.0, u_min=-1.0, u_max=1.0),)
    thr = penalty_threshold(top, params, np.array([1.0]))[0]
    rng = np.random.default_rng(7)
    g = TimeGrid(4.0, 40)
    over = max(float(np.max(simulate_penalty(
        top, params, ControlTrajectory(g, rng.uniform(-1, 1, (40, 1))), [4.0],
        PenaltyConfig(gamma)).V - 4.0)) for gamma in (thr * 1.01, 2 * thr, 50.0, 400.0)
        for _ in range(5))
    ok = mono and e[-1] < e[0] / 4 and over <= 0.0
    verdict(capsys, "3 penalty convergence", ok,
            "sup errors " + ", ".join(f"{x:.3e}" for x in e)
            + f"; final/initial {e[-1] / e[0]:.3f}; single-plant overshoot {over:.1e}")


def _exact_checks(top, params, u, V0):
    tr = simulate_exact(top, params, u, V0)
    pa = param_arrays(params)
    comp = max(float(np.max(np.abs(sg.s * (sg.V0 + w * sg.rate * (sg.t1 - sg.t0) - pa.V_max))
                            / (1 + np.abs(pa.V_max))))
               for sg in tr.segments for w in (0.0, 1.0))
    over = float(np.max(tr.V - pa.V_max))
    smin = min(float(np.min(tr.s)), min(float(np.min(sg.s)) for sg in tr.segments))
    wb = water_balance_residual(tr, u, params, top) / (1 + float(np.max(np.abs(tr.V))))
    return comp, over, smin, wb


def test_criterion_4_complementarity_and_bounds(oracle, capsys):
    cases = [(TOPOLOGY, PLANTS, oracle[0], [5.0, optimal_V0()])]
    rng = np.random.default_rng(11)
    for kind in ("isolated", "chain", "tree5"):
        pb = random_problem(kind, n_cells=40)
        pa = param_arrays(pb.params)
        for seed in range(40):
            dv = random_initial_guess(pb, seed)
            V0 = np.where(rng.random(pb.n_plants) < 0.5, pa.V_max, dv.V0)
            cases.append((pb.topology, pb.params, ControlTrajectory(pb.grid, dv.u), V0))
    worst = np.max([_exact_checks(*c) * np.array([1, 1, -1, 1]) for c in cases], axis=0)
    comp, over, neg_smin, wb = worst
    ok = comp <= 1e-9 and over <= 1e-9 and neg_smin <= 0.0 and wb <= 1e-8
    verdict(capsys, "4 complementarity and bounds", ok,
            f"{len(cases)} runs: complementarity {comp:.1e}, overshoot {over:.1e}, "
            f"min spill {-neg_smin:.1e}, water balance {wb:.1e}")


def test_criterion_5_gradient(capsys):
    worst = {}
    for kind, gamma in (("isolated", 20.0), ("chain", 20.0), ("tree5", 4.0)):
        pb = random_problem(kind)
        n = pb.n_plants
        V_max = np.array([p.V_max for p in pb.params])
        err = 0.0
        for seed in range(10):
            dv = random_initial_guess(pb, seed)
            dv = DecisionVector(np.minimum(dv.V0, V_max - 1e-3), dv.u)
            args = (gamma, 1e-2, 0.3, Anchor(random_initial_guess(pb, 1000 + seed).u), pb)
            kw = dict(rho=10.0, substeps=2)
            g = gradient(dv, *args, **kw)
            ga = np.concatenate([g.V0, g.u.ravel()])
            x = dv.flat()
            fd = np.empty_like(x)
            for i in range(len(x)):
                xp, xm = x.copy(), x.copy()
                xp[i] += 1e-5
                xm[i] -= 1e-5
                fd[i] = (penalized_objective(DecisionVector.from_flat(xp, n), *args, **kw)
                         - penalized_objective(DecisionVector.from_flat(xm, n), *args, **kw)) / 2e-5
            scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
            err = max(err, float(np.max(np.abs(ga - fd) / scale)))
        worst[kind] = err
    ok = max(worst.values()) <= 1e-5
    verdict(capsys, "5 gradient correctness", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_6_nco_certificate(oracle, capsys):
    u, _, _, _ = oracle
    tr = simulate_exact(TOPOLOGY, PLANTS, u, [5.0, optimal_V0()])
    b = normalize_multipliers(synthesize_example_multipliers(7.2))
    rep = check_nco(b, tr, u, PRICE, PLANTS, TOPOLOGY)
    worst = max(rep.adjoint_residual, rep.xi_residual, rep.mu_residual,
                rep.spill_orthogonality_residual, rep.periodicity_gap)
    ok = worst <= 1e-6 and rep.nontriviality_gap <= 1e-14 \
        and rep.hamiltonian_violation_fraction == 0.0
    verdict(capsys, "6 NCO certificate", ok,
            f"adjoint {rep.adjoint_residual:.1e}, complementarity {rep.xi_residual:.1e}/"
            f"{rep.mu_residual:.1e}, spill orthogonality {rep.spill_orthogonality_residual:.1e}, "
            f"periodicity {rep.periodicity_gap:.1e}, nontriviality {rep.nontriviality_gap:.1e} "
            f"(lambda={b.lam:.4f}), hamiltonian violations {rep.hamiltonian_violation_fraction:g}")


def test_criterion_7_topology(capsys):
    M = incidence_matrix(build_topology(TREE5_EDGES, 5))
    expected = np.array([[0, 0, 0, 0, 0],
                         [0, 0, 0, 0, 0],
                         [1, 0, 0, 0, 0],
                         [0, 0, 0, 0, 0],
                         [0, 1, 1, 1, 0]], dtype=float)
    verdict(capsys, "7 topology fidelity", bool(np.array_equal(M, expected)),
            "five-plant incidence matrix " + ("matches" if np.array_equal(M, expected)
                                              else f"differs:\n{M}"))


def test_criterion_8_determinism(optimize_runs, capsys):
    (_, a, _), (_, b, _) = optimize_runs
    same = {name: (a / name).read_bytes() == (b / name).read_bytes()
            for name in ("report.json", "trajectory.csv")}
    verdict(capsys, "8 determinism", all(same.values()),
            ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in same.items()))
