import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from hydrocascade.cli import (ConfigError, _read_document, config_from_document, dispatch,
                              dump_config, parse_config)

BUNDLED = "bundled:two_plant"


def base_doc():
    return copy.deepcopy(_read_document(BUNDLED))


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def run(args, capsys):
    code = dispatch(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def small_doc():
    return {
        "horizon": 2.0,
        "plants": [{"id": 1, "A": 0.5, "Vmin": 0, "Vmax": 2, "umin": 0, "umax": 1, "h": 1,
                    "S": 1, "downstream": None}],
        "price": [{"t": 0, "value": 1}, {"t": 1, "value": 4}],
        "grid": {"N": 8},
        "solver": {"gamma_max": 100, "epsilon_min": 1e-3, "alpha_min": 1e-3,
                   "inner": {"max_iterations": 100}},
        "control": [[0.5]] * 8,
        "initial_volumes": [1.0],
    }


def test_validate_bundled(capsys):
    code, out, _ = run(["validate", "--config", BUNDLED], capsys)
    assert code == 0
    assert json.loads(out) == {"valid": True, "n_plants": 2, "n_cells": 320}


def test_validate_reports_every_error_with_path(tmp_path, capsys):
    doc = base_doc()
    del doc["plants"][0]["Vmax"]
    doc["grid"]["N"] = 0
    code, _, err = run(["validate", "--config", write(tmp_path, doc)], capsys)
    assert code == 2
    assert "$.plants[0]: 'Vmax' is a required property" in err
    assert "$.grid.N: 0 is less than the minimum of 1" in err


@pytest.mark.parametrize("edit, message", [
    (lambda d: d["plants"][1].update(downstream=1), "$.plants[1].downstream: downstream must exceed id"),
    (lambda d: d["price"].__setitem__(0, {"t": 1, "value": 3}), "$.price[0].t: price must start at t=0"),
    (lambda d: d["price"][1].update(t=6.01), "is not a grid node"),
    (lambda d: d.update(initial_volumes=[5.0]), "$.initial_volumes: expected 2 values"),
    (lambda d: d.update(initial_volumes=[6.0, 7.2]), "$.initial_volumes[0]: exceeds Vmax"),
    (lambda d: d["control"]["piecewise"][0].update(u=[1, -2]), "$.control:"),
    (lambda d: d["plants"][0].update(id=3), "ids must be dense"),
])
def test_semantic_errors(edit, message):
    doc = base_doc()
    edit(doc)
    with pytest.raises(ConfigError) as info:
        config_from_document(doc)
    assert any(message in e for e in info.value.errors), info.value.errors


def test_unreadable_and_missing_config(tmp_path, capsys):
    assert run(["validate", "--config", str(tmp_path / "nope.json")], capsys)[0] == 2
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run(["validate", "--config", str(tmp_path / "bad.json")], capsys)
    assert code == 2 and "invalid JSON" in err
    code, _, err = run(["validate"], capsys)
    assert code == 2 and "--config is required" in err


def test_dump_config_round_trip(tmp_path):
    cfg = parse_config(BUNDLED)
    text = dump_config(cfg)
    again = parse_config(write(tmp_path, json.loads(text)))
    assert dump_config(again) == text
    assert again.params == cfg.params and again.price == cfg.price
    assert np.array_equal(again.control.u, cfg.control.u)


def test_simulate_exact_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["simulate-exact", "--config", BUNDLED, "--out", str(out)], capsys)[0] == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,V1,V2,u1,u2,s1,s2"
    assert len(lines) == 322
    table = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    assert table.shape == (321, 7)
    assert np.allclose(table[:, 5], 1.0) and np.all(table[:, 6] == 0)
    assert table[0, 2] == 7.2 and table[-1, 2] == pytest.approx(7.2, abs=1e-12)
    rep = json.loads((out / "report.json").read_text())
    assert rep["objective"] == pytest.approx(4070.4, abs=1e-9)
    assert rep["water_balance_residual"] < 1e-12
    assert rep["complementarity_residual"] < 1e-12
    # deterministic, byte for byte
    out2 = tmp_path / "run2"
    run(["simulate-exact", "--config", BUNDLED, "--out", str(out2)], capsys)
    for name in ("trajectory.csv", "report.json"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_format_flag(tmp_path, capsys):
    out = tmp_path / "run"
    run(["simulate-exact", "--config", BUNDLED, "--out", str(out), "--format", "csv"], capsys)
    assert sorted(p.name for p in out.iterdir()) == ["trajectory.csv"]


def test_simulate_penalty_and_sweep(capsys):
    code, out, _ = run(["simulate-penalty", "--config", BUNDLED, "--grid-n", "64",
                        "--gamma", "400"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["gamma"] == 400
    assert rep["max_overshoot"] <= 0 and rep["min_spill"] >= 0
    code, out, _ = run(["sweep-gamma", "--config", BUNDLED, "--grid-n", "64"], capsys)
    sweep = json.loads(out)["sweep"]
    errs = sweep["sup_errors"]
    assert sweep["gammas"] == [25, 50, 100, 200]
    assert code == 0 and errs == sorted(errs, reverse=True)


def test_simulation_failure_exit_code(tmp_path, capsys):
    doc = base_doc()
    doc["grid"]["N"] = 16
    doc["simulation"].update(rtol=1e-300, atol=1e-300, min_step=1e-4)
    code, _, err = run(["simulate-penalty", "--config", write(tmp_path, doc)], capsys)
    assert code == 1 and "numerical failure" in err and "plant" in err


def test_check_nco(tmp_path, capsys):
    code, out, _ = run(["check-nco", "--config", BUNDLED], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["passed"] and rep["multipliers"] == "synthesized"
    assert rep["adjoint_residual"] < 1e-10
    # a damaged multiplier file fails the check
    from hydrocascade.nco import normalize_multipliers, synthesize_example_multipliers
    doc = normalize_multipliers(synthesize_example_multipliers(7.2)).as_dict()
    doc["p"][100][1] += 1e-3
    mfile = tmp_path / "mult.json"
    mfile.write_text(json.dumps(doc))
    code, out, _ = run(["check-nco", "--config", BUNDLED, "--multipliers", str(mfile)], capsys)
    rep = json.loads(out)
    assert code == 1 and not rep["passed"] and rep["multipliers"] == "file"
    assert rep["adjoint_residual"] == pytest.approx(1e-3, rel=1e-6)


def test_check_nco_needs_multipliers_off_example(tmp_path, capsys):
    code, _, err = run(["check-nco", "--config", write(tmp_path, small_doc())], capsys)
    assert code == 2 and "--multipliers" in err


def test_grid_override_rejects_cell_table(tmp_path, capsys):
    code, _, err = run(["simulate-exact", "--config", write(tmp_path, small_doc()),
                        "--grid-n", "4"], capsys)
    assert code == 2 and "per-cell" in err


def test_optimize_small(tmp_path, capsys):
    code, out, _ = run(["optimize", "--config", write(tmp_path, small_doc())], capsys)
    rep = json.loads(out)
    assert code == 0
    assert len(rep["stages"]) > 0 and rep["failures"] == []
    # upstream-free single plant: turbine fully while staying periodic
    assert rep["objective"] > 0
    assert rep["periodicity_gap"] <= (2e-3) ** 0.5 + 1e-8


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hydrocascade", "validate", "--config", BUNDLED],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0 and json.loads(res.stdout)["valid"]


def test_unknown_command_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        dispatch(["flood", "--config", BUNDLED])
    assert info.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_warm_start_needs_inputs(tmp_path, capsys):
    doc = small_doc()
    doc["solver"]["warm_start"] = True
    del doc["control"]
    code, _, err = run(["optimize", "--config", write(tmp_path, doc)], capsys)
    assert code == 2 and "warm_start" in err
