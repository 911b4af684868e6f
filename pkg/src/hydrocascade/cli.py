"""Command line front end: config parsing, dispatch and result files.

Exit codes: 0 success, 1 numerical failure (simulation error, failed
certificate or acceptance check), 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .core import (CascadeError, CascadeTopology, ControlTrajectory, PlantParams,
                   PriceSignal, TimeGrid, Trajectory, build_topology, objective,
                   param_arrays, water_balance_residual)
from .ocp import (CascadeProblem, DecisionVector, InnerOptions, SolverSchedule,
                  solve_continuation, solve_multistart)
from .spillway import (IntegratorOptions, PenaltyConfig, SimulationError, gamma_sweep,
                       simulate_exact, simulate_penalty)

log = logging.getLogger(__name__)

COMMANDS = ("validate", "simulate-exact", "simulate-penalty", "sweep-gamma", "optimize",
            "check-nco", "example")
BUNDLED_PREFIX = "bundled:"

_num = {"type": "number"}
_SCHEDULE_KEYS = {f.name for f in fields(SolverSchedule)} - {"inner"}
_INNER_KEYS = {f.name for f in fields(InnerOptions)}

SCHEMA = {
    "type": "object",
    "required": ["horizon", "plants", "price", "grid"],
    "additionalProperties": False,
    "properties": {
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "plants": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "A", "Vmin", "Vmax", "umin", "umax", "h", "S", "downstream"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "A": {"type": "number", "minimum": 0},
                    "Vmin": _num, "Vmax": _num, "umin": _num, "umax": _num, "h": _num,
                    "S": {"type": "number", "exclusiveMinimum": 0},
                    "downstream": {"type": ["integer", "null"]},
                },
            },
        },
        "price": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "required": ["t", "value"],
                      "additionalProperties": False,
                      "properties": {"t": _num, "value": _num}},
        },
        "grid": {"type": "object", "required": ["N"], "additionalProperties": False,
                 "properties": {"N": {"type": "integer", "minimum": 1}}},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                **{k: _num for k in sorted(_SCHEDULE_KEYS)},
                "max_rho_updates": {"type": "integer", "minimum": 0},
                "substeps": {"type": "integer", "minimum": 1},
                "anchor_mode": {"enum": ["none", "previous_iterate", "fixed"]},
                "periodicity": {"enum": ["multiplier", "penalty"]},
                "inner": {"type": "object", "additionalProperties": False,
                          "properties": {k: {"type": "integer", "minimum": 1}
                                         if k in ("max_iterations", "history",
                                                  "max_line_search") else _num
                                         for k in sorted(_INNER_KEYS)}},
                "seeds": {"type": "array", "items": {"type": "integer"}},
                "multistart": {"type": "integer", "minimum": 0},
                "warm_start": {"type": "boolean"},
            },
        },
        "simulation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 1},
                "gammas": {"type": "array", "minItems": 1, "items": _num},
                "per_plant_exponent": {"type": "boolean"},
                "max_exponent_clamp": {"type": "number", "minimum": 0},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "min_step": {"type": "number", "exclusiveMinimum": 0},
                "max_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "control": {
            "oneOf": [
                {"type": "array", "items": {"type": "array", "items": _num}},
                {"type": "object", "required": ["piecewise"], "additionalProperties": False,
                 "properties": {"piecewise": {
                     "type": "array", "minItems": 1,
                     "items": {"type": "object", "required": ["t", "u"],
                               "additionalProperties": False,
                               "properties": {"t": _num,
                                              "u": {"type": "array", "items": _num}}}}}},
            ],
        },
        "initial_volumes": {"type": "array", "items": _num},
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"directory": {"type": "string"},
                           "formats": {"type": "array",
                                       "items": {"enum": ["csv", "json"]}}},
        },
    },
}


class ConfigError(CascadeError):
    """Invalid configuration; ``errors`` lists every problem with its JSON path."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    horizon: float
    params: tuple[PlantParams, ...]
    topology: CascadeTopology
    price: PriceSignal
    grid: TimeGrid
    schedule: SolverSchedule
    seeds: tuple[int, ...] = ()
    multistart: int = 0
    warm_start: bool = False
    simulation: dict = field(default_factory=dict)
    control: Optional[ControlTrajectory] = None
    initial_volumes: Optional[np.ndarray] = None
    output_dir: Optional[str] = None
    formats: tuple[str, ...] = ("csv", "json")
    document: dict = field(default_factory=dict)

    def problem(self) -> CascadeProblem:
        return CascadeProblem(self.topology, self.params, self.price, self.grid)

    def penalty_config(self, gamma: Optional[float] = None) -> PenaltyConfig:
        sim = self.simulation
        d = IntegratorOptions()
        opts = IntegratorOptions(*(sim.get(f.name, getattr(d, f.name))
                                   for f in fields(IntegratorOptions)))
        return PenaltyConfig(gamma if gamma is not None else sim.get("gamma", 100.0),
                             per_plant_exponent=sim.get("per_plant_exponent", True),
                             max_exponent_clamp=sim.get("max_exponent_clamp", 700.0),
                             integrator=opts)


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _semantic_errors(doc: dict) -> list[str]:
    errs = []
    plants = doc["plants"]
    n = len(plants)
    for k, p in enumerate(plants):
        if p["id"] != k + 1:
            errs.append(f"$.plants[{k}].id: ids must be dense 1..{n} in order, got {p['id']}")
        d = p["downstream"]
        if d is not None and d <= p["id"]:
            errs.append(f"$.plants[{k}].downstream: downstream must exceed id")
        elif d is not None and d > n:
            errs.append(f"$.plants[{k}].downstream: no plant with id {d}")
        if not p["Vmin"] < p["Vmax"]:
            errs.append(f"$.plants[{k}]: Vmin must be below Vmax")
        if not p["umin"] <= p["umax"]:
            errs.append(f"$.plants[{k}]: umin must not exceed umax")
    ts = [e["t"] for e in doc["price"]]
    if ts[0] != 0:
        errs.append("$.price[0].t: price must start at t=0")
    for k in range(1, len(ts)):
        if not ts[k] > ts[k - 1]:
            errs.append(f"$.price[{k}].t: breakpoints must be strictly increasing")
    if ts[-1] >= doc["horizon"]:
        errs.append(f"$.price[{len(ts) - 1}].t: breakpoint beyond the horizon")
    N, T = doc["grid"]["N"], doc["horizon"]
    for k, t in enumerate(ts):
        if abs(t * N / T - round(t * N / T)) > 1e-9 * max(1.0, N):
            errs.append(f"$.price[{k}].t: breakpoint {t} is not a grid node for N={N}")
    if "initial_volumes" in doc and len(doc["initial_volumes"]) != n:
        errs.append(f"$.initial_volumes: expected {n} values")
    ctrl = doc.get("control")
    if isinstance(ctrl, list):
        if len(ctrl) != N:
            errs.append(f"$.control: expected {N} rows, got {len(ctrl)}")
        for k, row in enumerate(ctrl):
            if len(row) != n:
                errs.append(f"$.control[{k}]: expected {n} values")
                break
    elif isinstance(ctrl, dict):
        pw = ctrl["piecewise"]
        if pw[0]["t"] != 0:
            errs.append("$.control.piecewise[0].t: must start at t=0")
        for k, e in enumerate(pw):
            if len(e["u"]) != n:
                errs.append(f"$.control.piecewise[{k}].u: expected {n} values")
            if k and not e["t"] > pw[k - 1]["t"]:
                errs.append(f"$.control.piecewise[{k}].t: times must be strictly increasing")
    return errs


def _piecewise_cells(pw: list, grid: TimeGrid) -> np.ndarray:
    """Exact cell averages of a piecewise-constant control given by breakpoints."""
    starts = np.array([e["t"] for e in pw] + [grid.horizon])
    vals = np.array([e["u"] for e in pw], dtype=float)
    a, b = grid.nodes[:-1], grid.nodes[1:]
    out = np.zeros((grid.n_cells, vals.shape[1]))
    for k in range(len(pw)):
        ov = np.clip(np.minimum(b, starts[k + 1]) - np.maximum(a, starts[k]), 0, None)
        w = ov / grid.dt
        # cells inside one piece take its value exactly, not a rounded average
        w[np.abs(w - 1.0) < 1e-12] = 1.0
        w[w < 1e-12] = 0.0
        out += w[:, None] * vals[k]
    return out


def config_from_document(doc: dict) -> RunConfig:
    """Validate a config document; raises :class:`ConfigError` listing all problems."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted((f"{_path(e.absolute_path)}: {e.message}"
                   for e in validator.iter_errors(doc)))
    if errs:
        raise ConfigError(errs)
    errs = _semantic_errors(doc)
    if errs:
        raise ConfigError(errs)
    plants = doc["plants"]
    params = tuple(PlantParams(A=p["A"], V_min=p["Vmin"], V_max=p["Vmax"], u_min=p["umin"],
                               u_max=p["umax"], h=p["h"], S=p["S"]) for p in plants)
    edges = [(p["id"], p["downstream"]) for p in plants if p["downstream"] is not None]
    T = float(doc["horizon"])
    try:
        topology = build_topology(edges, len(plants))
        price = PriceSignal(tuple(float(e["t"]) for e in doc["price"]) + (T,),
                            tuple(float(e["value"]) for e in doc["price"]))
        grid = TimeGrid(T, int(doc["grid"]["N"]))
        solver = dict(doc.get("solver", {}))
        seeds = tuple(solver.pop("seeds", ()))
        multistart = solver.pop("multistart", 0)
        warm_start = solver.pop("warm_start", False)
        inner = InnerOptions(**solver.pop("inner", {}))
        schedule = SolverSchedule(**solver, inner=inner)
    except (CascadeError, ValueError, TypeError) as exc:
        raise ConfigError([f"$: {exc}"]) from None
    control = None
    if "control" in doc:
        ctrl = doc["control"]
        u = (np.array(ctrl, dtype=float) if isinstance(ctrl, list)
             else _piecewise_cells(ctrl["piecewise"], grid))
        control = ControlTrajectory(grid, u)
        try:
            control.check_admissible(params, tol=1e-12)
        except CascadeError as exc:
            raise ConfigError([f"$.control: {exc}"]) from None
    V0 = None
    if "initial_volumes" in doc:
        V0 = np.array(doc["initial_volumes"], dtype=float)
        over = V0 > param_arrays(params).V_max
        if np.any(over):
            raise ConfigError([f"$.initial_volumes[{int(np.argmax(over))}]: exceeds Vmax"])
    out = doc.get("output", {})
    return RunConfig(T, params, topology, price, grid, schedule, seeds, multistart, warm_start,
                     dict(doc.get("simulation", {})), control, V0, out.get("directory"),
                     tuple(out.get("formats", ("csv", "json"))), doc)


def _read_document(path) -> dict:
    path = str(path)
    try:
        if path.startswith(BUNDLED_PREFIX):
            name = path[len(BUNDLED_PREFIX):]
            name = name if name.endswith(".json") else name + ".json"
            text = resources.files("hydrocascade").joinpath("data", name).read_text()
        else:
            text = Path(path).read_text()
    except (OSError, FileNotFoundError) as exc:
        raise ConfigError([f"$: cannot read {path}: {exc}"]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"$: invalid JSON at line {exc.lineno}: {exc.msg}"]) from None


def parse_config(path) -> RunConfig:
    """Load and validate a JSON config (``bundled:<name>`` reads package data)."""
    return config_from_document(_read_document(path))


def dump_config(cfg: RunConfig) -> str:
    """Canonical JSON text of the document behind ``cfg``."""
    return json.dumps(cfg.document, sort_keys=True, indent=2) + "\n"


def bundled_config_path(name: str = "two_plant") -> str:
    return BUNDLED_PREFIX + name


# ---------------------------------------------------------------------------
#  Output
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_csv(traj: Trajectory, u: ControlTrajectory) -> str:
    """Node table ``t,V1..,u1..,s1..``; the last row repeats the last cell's u and s."""
    n = traj.V.shape[1]
    header = ["t"] + [f"{k}{i}" for k in "Vus" for i in range(1, n + 1)]
    uu = np.vstack([u.u, u.u[-1:]])
    ss = np.vstack([traj.s, traj.s[-1:]])
    rows = np.column_stack([traj.grid.nodes, traj.V, uu, ss])
    lines = [",".join(header)] + [",".join(_fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _clean(obj):
    """JSON-safe copy: numpy to builtins, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_results(report: dict, traj: Optional[Trajectory], u: Optional[ControlTrajectory],
                 out_dir: Optional[str], formats: Sequence[str] = ("csv", "json"),
                 stream=None) -> list[Path]:
    """Write ``report.json`` / ``trajectory.csv``; without a directory print the report."""
    if out_dir is None:
        (stream or sys.stdout).write(report_json(report))
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        written.append(out / "report.json")
        written[-1].write_text(report_json(report))
    if "csv" in formats and traj is not None and u is not None:
        written.append(out / "trajectory.csv")
        written[-1].write_text(trajectory_csv(traj, u))
    return written


def trajectory_diagnostics(traj: Trajectory, u: ControlTrajectory, cfg: RunConfig) -> dict:
    pa = param_arrays(cfg.params)
    if traj.segments:
        # exact runs: piecewise-affine pieces, check both ends of each
        comp = [np.abs(sg.s * (sg.V0 + w * sg.rate * (sg.t1 - sg.t0) - pa.V_max))
                for sg in traj.segments for w in (0.0, 1.0)]
    else:
        comp = np.abs(traj.s * (np.maximum(traj.V[1:], traj.V[:-1]) - pa.V_max))
    return {
        "objective": objective(u, traj, cfg.price, cfg.params, cfg.topology),
        "water_balance_residual": water_balance_residual(traj, u, cfg.params, cfg.topology),
        "complementarity_residual": float(np.max(comp, initial=0.0)),
        "max_overshoot": float(np.max(traj.V - pa.V_max)),
        "min_spill": float(np.min(traj.s, initial=0.0)),
        "periodicity_gap": float(np.linalg.norm(traj.V[0] - traj.V[-1])),
    }


# ---------------------------------------------------------------------------
#  Commands
# ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


def _require_run_inputs(cfg: RunConfig):
    if cfg.control is None:
        raise UsageError("this command needs a 'control' entry in the config")
    if cfg.initial_volumes is None:
        raise UsageError("this command needs 'initial_volumes' in the config")
    return cfg.control, cfg.initial_volumes


def cmd_validate(cfg: RunConfig, args) -> tuple[int, dict, None, None]:
    return 0, {"valid": True, "n_plants": cfg.topology.n_plants,
               "n_cells": cfg.grid.n_cells}, None, None


def cmd_simulate_exact(cfg, args):
    u, V0 = _require_run_inputs(cfg)
    tr = simulate_exact(cfg.topology, cfg.params, u, V0)
    rep = {"command": "simulate-exact", **trajectory_diagnostics(tr, u, cfg)}
    return 0, rep, tr, u


def cmd_simulate_penalty(cfg, args):
    u, V0 = _require_run_inputs(cfg)
    pc = cfg.penalty_config(args.gamma)
    tr = simulate_penalty(cfg.topology, cfg.params, u, V0, pc)
    rep = {"command": "simulate-penalty", "gamma": pc.gamma,
           **trajectory_diagnostics(tr, u, cfg)}
    rep.pop("complementarity_residual")
    return 0, rep, tr, u


def cmd_sweep_gamma(cfg, args):
    u, V0 = _require_run_inputs(cfg)
    gammas = cfg.simulation.get("gammas", [25.0, 50.0, 100.0, 200.0])
    if args.gamma is not None:
        gammas = [g for g in gammas if g <= args.gamma] or [args.gamma]
    sweep = gamma_sweep(cfg.topology, cfg.params, u, V0, gammas, cfg.penalty_config(gammas[0]))
    tr = simulate_exact(cfg.topology, cfg.params, u, V0)
    return 0, {"command": "sweep-gamma", "sweep": sweep.as_dict()}, tr, u


def _solve(cfg: RunConfig, seed: Optional[int]):
    problem = cfg.problem()
    seeds = list(cfg.seeds) + list(range(cfg.multistart))
    if seed is not None:
        seeds.append(seed)
    seeds = sorted(set(seeds))
    if seeds:
        rep, summary = solve_multistart(problem, cfg.schedule, seeds)
    else:
        init = None
        if cfg.warm_start:
            if cfg.control is None or cfg.initial_volumes is None:
                raise UsageError("solver.warm_start needs 'control' and 'initial_volumes'")
            init = DecisionVector(cfg.initial_volumes, cfg.control.u)
        rep, summary = solve_continuation(problem, cfg.schedule, init), []
    return rep, summary


def _solve_report(rep, summary) -> dict:
    return {
        "objective": rep.exact_objective,
        "V0": rep.decision.V0,
        "periodicity_gap": rep.periodicity_gap,
        "stages": [s.as_dict() for s in rep.stages],
        "failures": list(rep.failures),
        "multistart": [{"seed": s, "objective": v} for s, v in summary],
    }


def cmd_optimize(cfg, args):
    rep, summary = _solve(cfg, args.seed)
    out = {"command": "optimize", **_solve_report(rep, summary),
           **{k: v for k, v in trajectory_diagnostics(rep.trajectory, rep.control, cfg).items()
              if k != "objective"}}
    code = 1 if rep.failures and not rep.stages else 0
    return code, out, rep.trajectory, rep.control


def _is_example(cfg: RunConfig) -> bool:
    from . import example as ex
    return (cfg.params == ex.PLANTS and cfg.topology == ex.TOPOLOGY
            and cfg.price == ex.PRICE and cfg.horizon == ex.HORIZON)


def cmd_check_nco(cfg, args):
    from . import example as ex
    from .nco import (AdjointBundle, check_nco, normalize_multipliers,
                      synthesize_example_multipliers)
    if args.multipliers:
        u, V0 = _require_run_inputs(cfg)
        doc = json.loads(Path(args.multipliers).read_text())
        bundle = AdjointBundle.from_dict(cfg.grid, doc)
        tr = simulate_exact(cfg.topology, cfg.params, u, V0)
        source = "file"
    else:
        if not _is_example(cfg):
            raise UsageError("multiplier synthesis is only available for the two-plant "
                             "example; pass --multipliers for other cascades")
        V02 = float(cfg.initial_volumes[1]) if cfg.initial_volumes is not None \
            else ex.optimal_V0()
        u, _, _, _ = ex.analytic_solution(V02, cfg.grid.n_cells)
        if cfg.control is not None:
            u = cfg.control
        tr = simulate_exact(cfg.topology, cfg.params, u, np.array([5.0, V02]))
        bundle = normalize_multipliers(synthesize_example_multipliers(V02, cfg.grid.n_cells))
        source = "synthesized"
    rep = check_nco(bundle, tr, u, cfg.price, cfg.params, cfg.topology)
    out = {"command": "check-nco", "multipliers": source, "passed": rep.passed(),
           **rep.as_dict()}
    return (0 if rep.passed() else 1), out, tr, u


def run_example(n_cells: int = 320, verbose: bool = True, stream=None) -> tuple[bool, dict]:
    """Oracle, exact simulation, certificate and optimiser on the two-plant example."""
    from . import example as ex
    from .nco import check_nco, level_crossings, normalize_multipliers, \
        synthesize_example_multipliers
    stream = stream or sys.stdout
    checks = []

    def record(name, ok, detail):
        checks.append({"check": name, "passed": bool(ok), "detail": detail})
        if verbose:
            stream.write(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}\n")

    V0 = ex.optimal_V0()
    best = ex.objective_closed_form(V0)
    record("closed-form optimum", abs(V0 - 7.2) < 1e-9,
           f"V0 = {V0:.6f}, profit = {best:.4f}")
    u, oracle, tau1, tau2 = ex.analytic_solution(V0, n_cells)
    problem = ex.TwoPlantExample().problem(n_cells)
    tr = simulate_exact(problem.topology, problem.params, u, np.array([5.0, V0]))
    err = float(np.max(np.abs(tr.V - oracle.V)))
    record("exact simulation reproduces oracle", err < 1e-8, f"max |V - V_oracle| = {err:.2e}")
    rep = check_nco(normalize_multipliers(synthesize_example_multipliers(V0, n_cells)),
                    tr, u, problem.price, problem.params, problem.topology)
    record("optimality certificate", rep.passed(),
           f"adjoint residual {rep.adjoint_residual:.1e}, "
           f"hamiltonian violations {rep.hamiltonian_violation_fraction:g}")
    t0 = time.perf_counter()
    sol = solve_continuation(problem)
    elapsed = time.perf_counter() - t0
    V2 = float(sol.decision.V0[1])
    t1, t2 = level_crossings(sol.control.u[:, 1], problem.grid, (0.5, 2.5))
    rel = abs(sol.exact_objective - best) / best
    record("optimiser", abs(V2 - V0) <= 0.05 and rel <= 5e-3
           and abs(t1 - tau1) <= 2 * problem.grid.dt + 1e-12
           and abs(t2 - tau2) <= 2 * problem.grid.dt + 1e-12,
           f"V2(0) = {V2:.5f}, switches {t1:.3f} / {t2:.3f}, profit "
           f"{sol.exact_objective:.4f} ({100 * rel:.3f}% off)")
    ok = all(c["passed"] for c in checks)
    return ok, {"command": "example", "passed": ok, "checks": checks,
                "optimizer": {"V0": sol.decision.V0, "objective": sol.exact_objective,
                              "switching_times": [t1, t2]},
                "_runtime_s": elapsed}


def cmd_example(cfg, args):
    ok, out = run_example(cfg.grid.n_cells, verbose=True, stream=sys.stderr)
    out.pop("_runtime_s")
    return (0 if ok else 1), out, None, None


HANDLERS = {
    "validate": cmd_validate,
    "simulate-exact": cmd_simulate_exact,
    "simulate-penalty": cmd_simulate_penalty,
    "sweep-gamma": cmd_sweep_gamma,
    "optimize": cmd_optimize,
    "check-nco": cmd_check_nco,
    "example": cmd_example,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydrocascade", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config path, or bundled:two_plant")
    ap.add_argument("--out", help="output directory (default: print report to stdout)")
    ap.add_argument("--gamma", type=float, help="penalty strength for simulate-penalty; "
                                                "upper gamma for sweep-gamma")
    ap.add_argument("--grid-n", type=int, help="override grid.N")
    ap.add_argument("--seed", type=int, help="extra multistart seed for optimize")
    ap.add_argument("--format", choices=("csv", "json"), help="write only this format")
    ap.add_argument("--multipliers", help="multiplier JSON for check-nco")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _load(args) -> RunConfig:
    path = args.config
    if path is None:
        if args.command != "example":
            raise UsageError("--config is required")
        path = bundled_config_path()
    doc = _read_document(path)
    if args.grid_n is not None:
        doc = dict(doc, grid={"N": args.grid_n})
        if isinstance(doc.get("control"), list):
            raise UsageError("--grid-n cannot resize a per-cell control table")
    return config_from_document(doc)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        code, report, traj, u = HANDLERS[args.command](cfg, args)
        formats = (args.format,) if args.format else cfg.formats
        emit_results(report, traj, u, args.out or cfg.output_dir, formats)
        return code
    except ConfigError as exc:
        for e in exc.errors:
            sys.stderr.write(f"config error: {e}\n")
        return 2
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (SimulationError, FloatingPointError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 1
    except CascadeError as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return 2


def main() -> None:
    sys.exit(dispatch())
