"""Forward simulation of the water balance with uncontrolled spillways.

Two simulators share the :class:`~hydrocascade.core.Trajectory` output:

* :func:`simulate_penalty` replaces the spill by the smooth law
  ``s_i = g_i exp(g_i (V_i - V_i^max))`` (``g_i = gamma**i`` by default) and
  integrates the resulting stiff ODE with implicit Euler steps, extrapolated
  and refined per cell until two successive refinements agree.
* :func:`simulate_exact` integrates the complementarity system directly.
  With piecewise-constant controls the motion is piecewise affine, so it is
  advanced event to event: plants are visited in index order, a full
  reservoir stays full while its net inflow is nonnegative and spills that
  inflow, and arrival times at the upper bound are located exactly.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import (CascadeError, CascadeTopology, ControlTrajectory, PlantParams,
                   Segment, TimeGrid, Trajectory, param_arrays)

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Numerical failure inside a simulator."""


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-6
    atol: float = 1e-8
    min_step: float = 1e-9
    max_step: float = math.inf


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty strength and integrator settings for :func:`simulate_penalty`.

    ``stiffness`` overrides the per-plant ladder ``gamma**i`` with explicit
    values; it must be strictly increasing so that downstream plants still
    dominate their upstream neighbours.
    """

    gamma: float
    per_plant_exponent: bool = True
    max_exponent_clamp: float = 700.0
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    stiffness: Optional[tuple[float, ...]] = None
    fixed_substeps: Optional[int] = None

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.max_exponent_clamp < 0:
            raise ValueError("max_exponent_clamp must be nonnegative")
        opts = self.integrator
        if min(opts.rtol, opts.atol, opts.min_step, opts.max_step) <= 0:
            raise ValueError("integrator tolerances must be positive")
        if self.stiffness is not None:
            g = self.stiffness
            if any(x <= 1 for x in g) or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError("stiffness override must be > 1 and strictly increasing")
        if self.fixed_substeps is not None and self.fixed_substeps < 1:
            raise ValueError("fixed_substeps must be >= 1")

    def stiffness_vector(self, n_plants: int) -> np.ndarray:
        if self.stiffness is not None:
            if len(self.stiffness) != n_plants:
                raise ValueError("stiffness override needs one value per plant")
            return np.asarray(self.stiffness, dtype=float)
        if self.per_plant_exponent:
            return self.gamma ** np.arange(1, n_plants + 1, dtype=float)
        return np.full(n_plants, float(self.gamma))


def penalty_spill(i: int, V_i: float, params: Sequence[PlantParams],
                  cfg: PenaltyConfig) -> float:
    """Spill rate ``g_i exp(g_i (V_i - V_i^max))`` of plant ``i``, in log space."""
    g = cfg.stiffness_vector(len(params))[i - 1]
    expo = math.log(g) + g * (V_i - params[i - 1].V_max)
    return math.exp(min(expo, cfg.max_exponent_clamp)) if expo > -745.2 else 0.0


def _check_initial(V0, pa, topology):
    V0 = np.asarray(V0, dtype=float)
    if V0.shape != (topology.n_plants,):
        raise CascadeError(f"initial volumes must have shape ({topology.n_plants},)")
    if not np.all(np.isfinite(V0)):
        raise CascadeError("initial volumes must be finite")
    over = V0 - pa.V_max
    if np.any(over > 1e-12 * (1 + np.abs(pa.V_max))):
        i = int(np.argmax(over))
        raise CascadeError(f"initial volume of plant {i + 1} exceeds V_max "
                           f"({V0[i]} > {pa.V_max[i]})")
    return np.minimum(V0, pa.V_max)


def _adaptive_cell(V, row, pa, k, down, dt, n, opts, cell):
    """One control cell by extrapolated implicit Euler with error control.

    Results with n, 2n and 4n steps give two Richardson values (second
    order); their difference estimates the error of the finer one, both
    for the end state and for the cell mean volume.  An
    extrapolated cell is only accepted if its spill is nonnegative and it
    does not cross V_max where plain implicit Euler stays below it, so the
    physical sign structure is kept.  Linear combinations with weights
    summing to one preserve the discrete water balance.
    """
    e1 = _kernels.advance_cell(V, row, pa.A, pa.V_max, k, down, dt, n)
    e2 = _kernels.advance_cell(V, row, pa.A, pa.V_max, k, down, dt, 2 * n)
    while True:
        e4 = _kernels.advance_cell(V, row, pa.A, pa.V_max, k, down, dt, 4 * n)
        r2 = [2 * b - a for a, b in zip(e1, e2)]
        r4 = [2 * b - a for a, b in zip(e2, e4)]
        # end state and cell mean volume (the objective uses the latter)
        err = np.maximum(np.abs(r4[0] - r2[0]), np.abs(r4[2] - r2[2])) / 3.0
        scale = opts.atol + opts.rtol * np.maximum(np.abs(r4[0]), np.abs(r4[2]))
        cross = (r4[0] > pa.V_max) & (e4[0] <= pa.V_max)
        if np.all(err <= scale) and np.all(r4[1] >= 0) and not cross.any():
            return r4[0], r4[1], r4[2], 2 * n
        n *= 2
        if dt / (4 * n) < opts.min_step:
            i = int(np.argmax(err / scale))
            raise SimulationError(
                f"step size underflow at t={cell * dt:.6g} (plant {i + 1}, "
                f"step {dt / (4 * n):.3g} < {opts.min_step:.3g})")
        e1, e2 = e2, e4


def simulate_penalty(topology: CascadeTopology, params: Sequence[PlantParams],
                     u: ControlTrajectory, V0, cfg: PenaltyConfig) -> Trajectory:
    """Integrate the exponential-penalty system over the control grid."""
    pa = param_arrays(params)
    u.check_admissible(params, tol=1e-12)
    V = _check_initial(V0, pa, topology)
    k = cfg.stiffness_vector(topology.n_plants)
    down = topology.down_index
    grid = u.grid
    N, dt = grid.n_cells, grid.dt
    opts = cfg.integrator
    n_min = max(1, math.ceil(dt / opts.max_step - 1e-12))
    if cfg.fixed_substeps is not None:
        n_min = max(n_min, cfg.fixed_substeps)

    Vn = np.empty((N + 1, topology.n_plants))
    s = np.empty((N, topology.n_plants))
    Vm = np.empty((N, topology.n_plants))
    Vn[0] = V
    n = n_min
    for cell in range(N):
        row = np.ascontiguousarray(u.u[cell])
        if cfg.fixed_substeps is not None:
            V, s[cell], Vm[cell] = _kernels.advance_cell(V, row, pa.A, pa.V_max, k, down,
                                                         dt, n_min)
        else:
            n = max(n_min, n // 2)
            V, s[cell], Vm[cell], n = _adaptive_cell(V, row, pa, k, down, dt, n, opts, cell)
        if not np.all(np.isfinite(V)):
            raise SimulationError(f"non-finite state at t={(cell + 1) * dt:.6g}")
        Vn[cell + 1] = V
    return Trajectory(grid, Vn, s, Vm)


def simulate_exact(topology: CascadeTopology, params: Sequence[PlantParams],
                   u: ControlTrajectory, V0, grid: Optional[TimeGrid] = None) -> Trajectory:
    """Integrate the complementarity (limit) system event by event."""
    pa = param_arrays(params)
    grid = u.grid if grid is None else grid
    if (grid.horizon, grid.n_cells) != (u.grid.horizon, u.grid.n_cells):
        raise CascadeError("control grid and simulation grid differ")
    u.check_admissible(params, tol=1e-12)
    V = _check_initial(V0, pa, topology).copy()
    n = topology.n_plants
    down = topology.down_index
    N, dt = grid.n_cells, grid.dt
    scale = 1.0 + np.abs(pa.V_max)
    pin_tol = 1e-12 * scale
    t_tol = grid.horizon * 1e-10

    pinned = V >= pa.V_max - pin_tol
    V[pinned] = pa.V_max[pinned]
    Vn = np.empty((N + 1, n))
    s_mean = np.zeros((N, n))
    V_mean = np.zeros((N, n))
    segments = []
    Vn[0] = V
    for cell in range(N):
        uc = u.u[cell]
        t, t_end = cell * dt, (cell + 1) * dt
        for _ in range(4 * n + 4):
            rate, spill = _rates(V, uc, pa.A, down, pinned)
            pinned = spill > 0
            # leave the boundary when inflow turned negative
            pinned |= (V >= pa.V_max - pin_tol) & (rate == 0.0)
            hit = np.full(n, np.inf)
            rising = (~pinned) & (rate > 0)
            hit[rising] = (pa.V_max[rising] - V[rising]) / rate[rising]
            tau = min(float(hit.min()), t_end - t)
            if not math.isfinite(tau) or tau < 0:
                raise SimulationError(f"event location failed at t={t:.6g}")
            segments.append(Segment(t, t + tau, V.copy(), rate, spill))
            s_mean[cell] += spill * tau / dt
            V_mean[cell] += (V + 0.5 * rate * tau) * tau / dt
            V = V + rate * tau
            t += tau
            arrived = hit <= tau + t_tol
            V[arrived] = pa.V_max[arrived]
            pinned |= arrived
            if t >= t_end - t_tol:
                break
        else:
            raise SimulationError(f"too many events in cell starting at t={cell * dt:.6g}")
        if not np.all(np.isfinite(V)):
            raise SimulationError(f"non-finite state at t={t_end:.6g}")
        Vn[cell + 1] = V
    return Trajectory(grid, Vn, s_mean, V_mean, tuple(segments))


def _rates(V, u, A, down, pinned):
    """Volume rates and spills given which reservoirs sit at the upper bound."""
    n = V.shape[0]
    add = np.zeros(n)
    rate = np.zeros(n)
    spill = np.zeros(n)
    for i in range(n):
        inflow = A[i] - u[i] + add[i]
        if pinned[i] and inflow >= 0:
            spill[i] = inflow
        else:
            rate[i] = inflow
        if down[i] >= 0:
            add[down[i]] += u[i] + spill[i]
    return rate, spill


def volume_lower_bound(topology: CascadeTopology, params: Sequence[PlantParams],
                       V0, t) -> np.ndarray:
    """Explicit lower envelope ``V0 - t * (max|u_i| + max A + sum_{J(i)} max|u_j|)``."""
    pa = param_arrays(params)
    umag = np.maximum(np.abs(pa.u_min), np.abs(pa.u_max))
    rate = umag + pa.A.max()
    for i in range(1, topology.n_plants + 1):
        for j in topology.upstream(i):
            rate[i - 1] += umag[j - 1]
    return np.asarray(V0, dtype=float) - np.multiply.outer(np.atleast_1d(t), rate).squeeze()


def penalty_threshold(topology: CascadeTopology, params: Sequence[PlantParams],
                      stiffness: np.ndarray) -> np.ndarray:
    """Per plant ``A_i + max|u_i| + sum_{j in J(i)} (max|u_j| + g_j)``.

    Where ``g_i`` exceeds this value the penalised volume cannot cross V_max.
    """
    pa = param_arrays(params)
    umag = np.maximum(np.abs(pa.u_min), np.abs(pa.u_max))
    thr = pa.A + umag
    for i in range(1, topology.n_plants + 1):
        for j in topology.upstream(i):
            thr[i - 1] += umag[j - 1] + stiffness[j - 1]
    return thr


@dataclass(frozen=True)
class SweepReport:
    gammas: tuple[float, ...]
    sup_errors: tuple[float, ...]
    spill_l2_errors: tuple[float, ...]
    overshoot: tuple[float, ...]

    def as_dict(self) -> dict:
        return {"gammas": list(self.gammas), "sup_errors": list(self.sup_errors),
                "spill_l2_errors": list(self.spill_l2_errors),
                "overshoot": list(self.overshoot)}


def gamma_sweep(topology: CascadeTopology, params: Sequence[PlantParams],
                u: ControlTrajectory, V0, gammas: Sequence[float],
                cfg: Optional[PenaltyConfig] = None, workers: int = 1) -> SweepReport:
    """Distance between penalised and exact trajectories for increasing gamma."""
    gammas = [float(g) for g in gammas]
    if not gammas or any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be a nonempty strictly increasing list")
    base = cfg or PenaltyConfig(gamma=gammas[0])
    exact = simulate_exact(topology, params, u, V0)
    V_max = param_arrays(params).V_max

    def run(g):
        c = PenaltyConfig(g, base.per_plant_exponent, base.max_exponent_clamp,
                          base.integrator, None, base.fixed_substeps)
        tr = simulate_penalty(topology, params, u, V0, c)
        sup = float(np.max(np.abs(tr.V - exact.V)))
        l2 = float(np.sqrt(u.grid.dt * np.sum((tr.s - exact.s) ** 2)))
        over = float(np.max(tr.V - V_max))
        log.debug("gamma=%g sup=%.3e l2=%.3e overshoot=%.3e", g, sup, l2, over)
        return sup, l2, over

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, gammas))
    else:
        rows = [run(g) for g in gammas]
    sup, l2, over = zip(*rows)
    return SweepReport(tuple(gammas), sup, l2, over)
