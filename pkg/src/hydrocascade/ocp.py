"""Periodic profit maximisation by penalised transcription and continuation.

The decision vector is ``(V0, u)``: free initial volumes and per-cell flows.
For given ``(gamma, eps, alpha)`` the cost to minimise is

    anchor - profit + int sum_j (exp(-gamma (V_j - V_j^min + eps)) - 1) / sqrt(gamma) dt
           + alpha int |u - u_anchor|^2 dt + periodic term,

with V from the penalised simulator (fixed implicit Euler sub-steps so the
map is smooth and its discrete adjoint exact).  Outer loops raise gamma,
then shrink eps, then alpha, warm-starting each stage; the final answer is
re-simulated with the exact complementarity system.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .core import (CascadeError, CascadeTopology, ControlTrajectory, PlantParams,
                   PriceSignal, TimeGrid, Trajectory, objective, param_arrays)
from .spillway import PenaltyConfig, SimulationError, simulate_exact, simulate_penalty

log = logging.getLogger(__name__)

ANCHOR_MODES = ("none", "previous_iterate", "fixed")
PERIODIC_MODES = ("multiplier", "penalty")


@dataclass(frozen=True)
class CascadeProblem:
    """Everything that defines an instance of the periodic scheduling problem."""

    topology: CascadeTopology
    params: tuple[PlantParams, ...]
    price: PriceSignal
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        if len(self.params) != self.topology.n_plants:
            raise CascadeError("one PlantParams per plant required")
        self.price.cell_values(self.grid)

    @property
    def n_plants(self) -> int:
        return self.topology.n_plants


@dataclass(frozen=True)
class DecisionVector:
    V0: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V0", np.array(self.V0, dtype=float))
        object.__setattr__(self, "u", np.array(self.u, dtype=float))

    def check(self, problem: CascadeProblem, tol: float = 1e-12) -> "DecisionVector":
        pa = param_arrays(problem.params)
        if self.u.shape != (problem.grid.n_cells, problem.n_plants):
            raise CascadeError(f"u has shape {self.u.shape}, expected "
                               f"{(problem.grid.n_cells, problem.n_plants)}")
        if self.V0.shape != (problem.n_plants,):
            raise CascadeError("V0 must have one entry per plant")
        ControlTrajectory(problem.grid, self.u).check_admissible(problem.params, tol)
        if np.any(self.V0 > pa.V_max + tol):
            raise CascadeError("initial volumes exceed V_max")
        return self

    def control(self, grid: TimeGrid) -> ControlTrajectory:
        return ControlTrajectory(grid, self.u)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.V0, self.u.ravel()])

    @classmethod
    def from_flat(cls, x: np.ndarray, n_plants: int) -> "DecisionVector":
        return cls(x[:n_plants], x[n_plants:].reshape(-1, n_plants))


@dataclass(frozen=True)
class InnerOptions:
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-7
    ftol: float = 1e-12
    history: int = 20
    max_line_search: int = 40


@dataclass(frozen=True)
class SolverSchedule:
    gamma0: float = 25.0
    gamma_growth: float = 2.0
    gamma_max: float = 6400.0
    epsilon0: float = 1e-2
    epsilon_shrink: float = 0.1
    epsilon_min: float = 1e-6
    alpha0: float = 1e-2
    alpha_shrink: float = 0.1
    alpha_min: float = 1e-6
    anchor_mode: str = "previous_iterate"
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    max_rho_updates: int = 12
    periodicity: str = "multiplier"
    substeps: int = 1
    inner: InnerOptions = field(default_factory=InnerOptions)

    def __post_init__(self):
        positive = (self.gamma0, self.gamma_max, self.epsilon0, self.epsilon_min,
                    self.alpha0, self.alpha_min, self.rho0, self.rho_max)
        if min(positive) <= 0:
            raise ValueError("schedule values must be positive")
        if self.gamma_growth <= 1 or self.rho_growth <= 1:
            raise ValueError("growth factors must exceed 1")
        if not (0 < self.epsilon_shrink < 1 and 0 < self.alpha_shrink < 1):
            raise ValueError("shrink factors must lie in (0, 1)")
        if self.gamma0 <= 1 or self.gamma_max < self.gamma0:
            raise ValueError("need 1 < gamma0 <= gamma_max")
        if self.epsilon_min > self.epsilon0 or self.alpha_min > self.alpha0:
            raise ValueError("minimum eps/alpha must not exceed the initial value")
        if self.anchor_mode not in ANCHOR_MODES:
            raise ValueError(f"anchor_mode must be one of {ANCHOR_MODES}")
        if self.periodicity not in PERIODIC_MODES:
            raise ValueError(f"periodicity must be one of {PERIODIC_MODES}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    def gammas(self) -> list[float]:
        return _ladder(self.gamma0, self.gamma_growth, self.gamma_max)

    def epsilons(self) -> list[float]:
        return _ladder(self.epsilon0, self.epsilon_shrink, self.epsilon_min)

    def alphas(self) -> list[float]:
        return _ladder(self.alpha0, self.alpha_shrink, self.alpha_min)

    def stages(self) -> list[tuple[float, float, float]]:
        """(gamma, eps, alpha) in solve order.

        The gamma ladder is climbed inside the first (eps, alpha) level; the
        later levels keep gamma at its final value.
        """
        out = []
        for a in self.alphas():
            for e in self.epsilons():
                ladder = self.gammas() if not out else [self.gammas()[-1]]
                out.extend((g, e, a) for g in ladder)
        return out


def _ladder(start, factor, end):
    vals = [start]
    grow = factor > 1
    while True:
        nxt = vals[-1] * factor
        if (grow and nxt > end * (1 + 1e-12)) or (not grow and nxt < end * (1 - 1e-12)):
            break
        vals.append(nxt)
    if abs(vals[-1] - end) > 1e-12 * end:
        vals.append(end)
    return vals


@dataclass(frozen=True)
class Anchor:
    """Reference point of the proximal term (and, in fixed mode, of V0)."""

    u: np.ndarray
    V0: Optional[np.ndarray] = None


@dataclass
class _Terms:
    gamma: float
    eps: float
    alpha: float
    anchor_u: np.ndarray
    anchor_V0: np.ndarray
    use_V0_anchor: bool
    periodic_mode: int
    rho: float
    nu: np.ndarray
    substeps: int


def _terms(problem, gamma, eps, alpha, anchor: Optional[Anchor], anchor_mode,
           periodic="penalty", rho=0.0, nu=None, substeps=1) -> _Terms:
    N, n = problem.grid.n_cells, problem.n_plants
    if anchor_mode == "none" or anchor is None:
        au, aV, use, alpha = np.zeros((N, n)), np.zeros(n), False, 0.0
    else:
        au = np.ascontiguousarray(anchor.u, dtype=float)
        if au.shape != (N, n):
            raise CascadeError("anchor control has the wrong shape")
        use = anchor_mode == "fixed" and anchor.V0 is not None
        aV = np.asarray(anchor.V0, dtype=float) if use else np.zeros(n)
    mode = 1 if periodic == "multiplier" else 0
    nu = np.zeros(n) if nu is None else np.asarray(nu, dtype=float)
    return _Terms(gamma, eps, alpha, au, aV, use, mode, rho, nu, substeps)


def _evaluate(problem: CascadeProblem, dv: DecisionVector, t: _Terms, want_grad=True):
    pa = param_arrays(problem.params)
    k = PenaltyConfig(t.gamma).stiffness_vector(problem.n_plants)
    c = problem.price.cell_values(problem.grid)
    parts, gV0, gu = _kernels.penalized_cost(
        np.ascontiguousarray(dv.V0), np.ascontiguousarray(dv.u), pa.A, pa.V_max,
        pa.V_min, pa.S, pa.h, k, problem.topology.down_index, c, problem.grid.dt,
        t.substeps, t.gamma, t.eps, t.alpha, t.anchor_u, t.anchor_V0,
        t.use_V0_anchor, t.periodic_mode, t.rho, t.nu, want_grad)
    if not np.isfinite(parts[0]):
        raise SimulationError("penalised cost is not finite")
    return parts, gV0, gu


def penalized_objective(dv: DecisionVector, gamma: float, eps: float, alpha: float,
                        anchor: Optional[Anchor], problem: CascadeProblem,
                        anchor_mode: str = "previous_iterate", rho: float = 0.0,
                        substeps: int = 1) -> float:
    """Penalised cost J of a decision vector (periodic term in penalty form)."""
    dv.check(problem)
    t = _terms(problem, gamma, eps, alpha, anchor, anchor_mode, "penalty", rho,
               substeps=substeps)
    return float(_evaluate(problem, dv, t, want_grad=False)[0][0])


def gradient(dv: DecisionVector, gamma: float, eps: float, alpha: float,
             anchor: Optional[Anchor], problem: CascadeProblem,
             anchor_mode: str = "previous_iterate", rho: float = 0.0,
             substeps: int = 1) -> DecisionVector:
    """Exact gradient of :func:`penalized_objective` (discrete adjoint)."""
    dv.check(problem)
    t = _terms(problem, gamma, eps, alpha, anchor, anchor_mode, "penalty", rho,
               substeps=substeps)
    _, gV0, gu = _evaluate(problem, dv, t)
    return DecisionVector(gV0, gu)


def periodicity_term(dv: DecisionVector, traj: Trajectory, eps: float, rho: float) -> float:
    """``rho * max(0, |V(0) - V(T)|^2 / 2 - eps)^2``."""
    gap = traj.V[0] - traj.V[-1]
    viol = max(0.0, 0.5 * float(gap @ gap) - eps)
    return rho * viol * viol


def penalty_trajectory(problem: CascadeProblem, dv: DecisionVector, gamma: float,
                       substeps: int = 1) -> Trajectory:
    """The trajectory the transcription sees: fixed sub-steps, no refinement."""
    cfg = PenaltyConfig(gamma, fixed_substeps=substeps)
    return simulate_penalty(problem.topology, problem.params, dv.control(problem.grid),
                            dv.V0, cfg)


# ---------------------------------------------------------------------------
#  Inner solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InnerResult:
    dv: DecisionVector
    cost: float
    iterations: int
    evaluations: int
    converged: bool
    message: str


def _bounds(problem: CascadeProblem):
    pa = param_arrays(problem.params)
    N = problem.grid.n_cells
    lo = np.concatenate([np.full(problem.n_plants, -np.inf), np.tile(pa.u_min, N)])
    hi = np.concatenate([pa.V_max, np.tile(pa.u_max, N)])
    return lo, hi


def _minimize(problem, init: DecisionVector, t: _Terms, opts: InnerOptions) -> InnerResult:
    n = problem.n_plants
    lo, hi = _bounds(problem)
    best = {"f": math.inf, "x": init.flat()}
    count = [0]

    def fun(x):
        count[0] += 1
        dv = DecisionVector.from_flat(x, n)
        parts, gV0, gu = _evaluate(problem, dv, t)
        if parts[0] < best["f"]:
            best["f"], best["x"] = parts[0], x.copy()
        return parts[0], np.concatenate([gV0, gu.ravel()])

    res = minimize(fun, np.clip(init.flat(), lo, hi), jac=True, method="L-BFGS-B",
                   bounds=list(zip(lo, hi)),
                   options={"maxiter": opts.max_iterations, "gtol": opts.gradient_tolerance,
                            "ftol": opts.ftol, "maxcor": opts.history,
                            "maxls": opts.max_line_search})
    x = np.clip(best["x"], lo, hi)
    return InnerResult(DecisionVector.from_flat(x, n), float(best["f"]), int(res.nit),
                       count[0], bool(res.success), str(res.message))


def solve_inner(problem: CascadeProblem, gamma: float, eps: float, alpha: float,
                init: DecisionVector, schedule: SolverSchedule,
                anchor: Optional[Anchor] = None, rho: Optional[float] = None,
                nu=None) -> InnerResult:
    """Minimise the penalised cost from ``init`` with box-projected L-BFGS.

    Without an explicit anchor the proximal term is centred at ``init``
    (``previous_iterate`` mode).
    """
    init.check(problem)
    if anchor is None and schedule.anchor_mode == "previous_iterate":
        anchor = Anchor(init.u.copy())
    t = _terms(problem, gamma, eps, alpha, anchor, schedule.anchor_mode,
               schedule.periodicity, schedule.rho0 if rho is None else rho, nu,
               schedule.substeps)
    return _minimize(problem, init, t, schedule.inner)


# ---------------------------------------------------------------------------
#  Continuation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageRecord:
    gamma: float
    epsilon: float
    alpha: float
    rho: float
    cost: float
    penalty_profit: float
    exact_profit: float
    exact_gap: float
    incumbent_profit: float
    periodicity_gap: float
    lower_penetration: float
    iterations: int
    converged: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SolveReport:
    stages: tuple[StageRecord, ...]
    decision: DecisionVector
    control: ControlTrajectory
    trajectory: Trajectory
    exact_objective: float
    failures: tuple[str, ...] = ()

    @property
    def periodicity_gap(self) -> float:
        return float(np.linalg.norm(self.trajectory.V[0] - self.trajectory.V[-1]))


def exact_profit(problem: CascadeProblem, dv: DecisionVector) -> tuple[float, Trajectory]:
    u = dv.control(problem.grid)
    tr = simulate_exact(problem.topology, problem.params, u, dv.V0)
    return objective(u, tr, problem.price, problem.params, problem.topology), tr


def extract_spillway(dv: DecisionVector, problem: CascadeProblem,
                     max_passes: int = 3) -> tuple[DecisionVector, Trajectory]:
    """Exact re-simulation, moving V0 onto the nearest periodic orbit.

    Reservoirs that reach their upper bound forget their initial volume, so
    replacing ``V0`` by the end volume closes the cycle exactly for them.
    The update is kept only while it reduces the periodicity gap.
    """
    dv.check(problem, tol=1e-9)
    pa = param_arrays(problem.params)
    u = dv.control(problem.grid)
    V0 = np.minimum(dv.V0, pa.V_max)
    tr = simulate_exact(problem.topology, problem.params, u, V0)
    gap = np.max(np.abs(tr.V[0] - tr.V[-1]))
    for _ in range(max_passes):
        if gap == 0:
            break
        cand = simulate_exact(problem.topology, problem.params, u, tr.V[-1])
        cgap = np.max(np.abs(cand.V[0] - cand.V[-1]))
        if cgap >= gap:
            break
        tr, gap = cand, cgap
    return DecisionVector(tr.V[0], dv.u), tr


def _exit_tolerances(schedule: SolverSchedule) -> tuple[float, float]:
    return math.sqrt(2 * schedule.epsilon_min) + 1e-8, schedule.epsilon_min + 1e-6


def _admissible(problem, tr: Trajectory, schedule: SolverSchedule) -> bool:
    """Exit feasibility of an exactly simulated process."""
    gap_tol, low_tol = _exit_tolerances(schedule)
    pa = param_arrays(problem.params)
    gap = float(np.linalg.norm(tr.V[0] - tr.V[-1]))
    return gap <= gap_tol and float(np.max(pa.V_min - tr.V)) <= low_tol


def default_initial_guess(problem: CascadeProblem) -> DecisionVector:
    pa = param_arrays(problem.params)
    u = np.tile(0.5 * (pa.u_min + pa.u_max), (problem.grid.n_cells, 1))
    return DecisionVector(0.5 * (pa.V_min + pa.V_max), u)


def random_initial_guess(problem: CascadeProblem, seed: int) -> DecisionVector:
    rng = np.random.default_rng(seed)
    pa = param_arrays(problem.params)
    u = rng.uniform(pa.u_min, pa.u_max, size=(problem.grid.n_cells, problem.n_plants))
    return DecisionVector(rng.uniform(pa.V_min, pa.V_max), u)


def solve_continuation(problem: CascadeProblem, schedule: SolverSchedule = SolverSchedule(),
                       init: Optional[DecisionVector] = None,
                       anchor: Optional[Anchor] = None) -> SolveReport:
    """Run the gamma / eps / alpha continuation and re-simulate exactly.

    After every stage the iterate is re-simulated with the exact system (on
    its nearest periodic orbit, see :func:`extract_spillway`).  The returned
    solution is the incumbent: the most profitable such process meeting the
    exit feasibility tolerances, or the last iterate if none does.
    """
    dv = (init or default_initial_guess(problem)).check(problem)
    nu = np.zeros(problem.n_plants)
    rho = schedule.rho0
    records: list[StageRecord] = []
    failures: list[str] = []
    incumbent = None  # (profit, decision, trajectory)
    for gamma, eps, alpha in schedule.stages():
        stage_anchor = anchor if schedule.anchor_mode == "fixed" else Anchor(dv.u.copy())
        try:
            for _ in range(schedule.max_rho_updates + 1):
                t = _terms(problem, gamma, eps, alpha, stage_anchor, schedule.anchor_mode,
                           schedule.periodicity, rho, nu, schedule.substeps)
                res = _minimize(problem, dv, t, schedule.inner)
                dv = res.dv
                ptr = penalty_trajectory(problem, dv, gamma, schedule.substeps)
                gap = ptr.V[0] - ptr.V[-1]
                if 0.5 * float(gap @ gap) <= eps or rho >= schedule.rho_max:
                    break
                if schedule.periodicity == "multiplier":
                    nu = nu + rho * gap
                rho = min(rho * schedule.rho_growth, schedule.rho_max)
            parts = _evaluate(problem, dv, t, want_grad=False)[0]
            exact_dv, tr = extract_spillway(dv, problem)
            u = exact_dv.control(problem.grid)
            prof = objective(u, tr, problem.price, problem.params, problem.topology)
        except (SimulationError, CascadeError) as exc:
            failures.append(f"gamma={gamma:g} eps={eps:g} alpha={alpha:g}: {exc}")
            log.warning("stage failed: %s", failures[-1])
            continue
        if _admissible(problem, tr, schedule) and (incumbent is None or prof > incumbent[0]):
            incumbent = (prof, exact_dv, tr)
        pa = param_arrays(problem.params)
        rec = StageRecord(
            gamma, eps, alpha, rho, float(parts[0]), float(parts[1]), prof,
            float(np.linalg.norm(tr.V[0] - tr.V[-1])),
            incumbent[0] if incumbent else math.nan,
            float(np.linalg.norm(gap)), float(max(0.0, np.max(pa.V_min - ptr.V))),
            res.iterations, res.converged)
        records.append(rec)
        log.info("gamma=%-8g eps=%-8g alpha=%-8g rho=%-8g profit=%.6f exact=%.6f "
                 "gap=%.2e it=%d", gamma, eps, alpha, rho, rec.penalty_profit,
                 rec.exact_profit, rec.periodicity_gap, rec.iterations)
    if incumbent is None:
        exact_dv, tr = extract_spillway(dv, problem)
        u = exact_dv.control(problem.grid)
        incumbent = (objective(u, tr, problem.price, problem.params, problem.topology),
                     exact_dv, tr)
    prof, final_dv, tr = incumbent
    return SolveReport(tuple(records), final_dv, final_dv.control(problem.grid), tr,
                       float(prof), tuple(failures))


def solve_multistart(problem: CascadeProblem, schedule: SolverSchedule = SolverSchedule(),
                     seeds: Sequence[int] = (), include_default: bool = True,
                     workers: int = 1) -> tuple[SolveReport, list[tuple[int, float]]]:
    """Continuation from the default guess and from seeded random guesses.

    The winner maximises exact profit among runs whose periodicity gap meets
    ``sqrt(2 eps_min)``; ties go to the smaller seed (default guess = -1).
    """
    starts = ([(-1, default_initial_guess(problem))] if include_default else [])
    starts += [(s, random_initial_guess(problem, s)) for s in seeds]
    if not starts:
        raise ValueError("no starting points")

    def run(item):
        return item[0], solve_continuation(problem, schedule, item[1])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    tol = _exit_tolerances(schedule)[0]
    ranked = sorted(results, key=lambda r: (r[1].periodicity_gap > tol,
                                            -r[1].exact_objective, r[0]))
    summary = [(seed, rep.exact_objective) for seed, rep in results]
    return ranked[0][1], summary
