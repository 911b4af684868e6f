"""Cascade topology, plant data, price signal, trajectories and objective.

Plant indices are 1-based in every public function (plant ``j`` is the
``j``-th reservoir counted from upstream); arrays are 0-based internally.
Controls and spills are piecewise-constant per grid cell, volumes live on
grid nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class CascadeError(ValueError):
    """Invalid topology, parameters, grid or trajectory."""


# ---------------------------------------------------------------------------
#  Topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CascadeTopology:
    """Cascade as a forest of in-trees.

    ``downstream[j-1]`` is the plant receiving the discharge of plant ``j``
    (always a larger index) or ``None`` for a terminal plant.
    """

    n_plants: int
    downstream: tuple[Optional[int], ...]

    def __post_init__(self):
        if self.n_plants < 1:
            raise CascadeError("a cascade needs at least one plant")
        if len(self.downstream) != self.n_plants:
            raise CascadeError("downstream map must have one entry per plant")
        for j, i in enumerate(self.downstream, start=1):
            if i is None:
                continue
            if not 1 <= i <= self.n_plants:
                raise CascadeError(f"plant {j}: downstream index {i} out of range")
            if i <= j:
                raise CascadeError(f"plant {j}: downstream must exceed id (got {i})")

    def upstream(self, i: int) -> tuple[int, ...]:
        """Inflow set J(i): plants discharging into plant ``i``."""
        return tuple(j for j, d in enumerate(self.downstream, start=1) if d == i)

    @property
    def down_index(self) -> np.ndarray:
        """0-based downstream indices, -1 for terminal plants."""
        return np.array([-1 if d is None else d - 1 for d in self.downstream],
                        dtype=np.int64)


def build_topology(edges: Iterable[tuple[int, int]], n_plants: int) -> CascadeTopology:
    """Build a topology from ``(j, i)`` pairs meaning "j discharges into i"."""
    downstream: list[Optional[int]] = [None] * n_plants
    for j, i in edges:
        if not (1 <= j <= n_plants and 1 <= i <= n_plants):
            raise CascadeError(f"edge ({j}, {i}) has an index out of range 1..{n_plants}")
        if i <= j:
            raise CascadeError(f"edge ({j}, {i}): downstream must exceed id")
        if downstream[j - 1] is not None:
            raise CascadeError(
                f"plant {j} has two downstream plants ({downstream[j - 1]} and {i})")
        downstream[j - 1] = i
    return CascadeTopology(n_plants, tuple(downstream))


def incidence_matrix(topology: CascadeTopology) -> np.ndarray:
    """Routing matrix M with ``M e_j = e_{J^-1(j)}`` (zero column if terminal)."""
    n = topology.n_plants
    M = np.zeros((n, n))
    for j, i in enumerate(topology.downstream):
        if i is not None:
            M[i - 1, j] = 1.0
    return M


# ---------------------------------------------------------------------------
#  Plant parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantParams:
    """Constants of one reservoir: inflow, volume and flow bounds, base."""

    A: float
    V_min: float
    V_max: float
    u_min: float
    u_max: float
    h: float = 0.0
    S: float = 1.0

    def __post_init__(self):
        if not self.V_min < self.V_max:
            raise CascadeError(f"V_min={self.V_min} must be below V_max={self.V_max}")
        if not self.u_min <= self.u_max:
            raise CascadeError(f"u_min={self.u_min} exceeds u_max={self.u_max}")
        if not self.S > 0:
            raise CascadeError(f"base area S must be positive, got {self.S}")
        if not self.A >= 0:
            raise CascadeError(f"inflow A must be nonnegative, got {self.A}")


class ParamArrays(NamedTuple):
    A: np.ndarray
    V_min: np.ndarray
    V_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    h: np.ndarray
    S: np.ndarray


def param_arrays(params: Sequence[PlantParams]) -> ParamArrays:
    """Stack per-plant constants into vectors."""
    return ParamArrays(*(np.array([getattr(p, f) for p in params], dtype=float)
                         for f in ParamArrays._fields))


def _check_sizes(params: Sequence[PlantParams], topology: CascadeTopology):
    if len(params) != topology.n_plants:
        raise CascadeError(
            f"{len(params)} plant parameter sets for {topology.n_plants} plants")


# ---------------------------------------------------------------------------
#  Time grid and price
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_cells: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise CascadeError("horizon must be positive")
        if self.n_cells < 1:
            raise CascadeError("grid needs at least one cell")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dt

    def node_index(self, t: float, rtol: float = 1e-9) -> int:
        """Index of the node at time ``t``; raises if ``t`` is not a node."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_cells or abs(k * self.dt - t) > rtol * self.horizon:
            raise CascadeError(f"time {t} is not a node of a {self.n_cells}-cell grid "
                               f"on [0, {self.horizon}]")
        return k

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_cells * factor)


@dataclass(frozen=True)
class PriceSignal:
    """Piecewise-constant price, ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``.

    ``breakpoints`` runs from 0 to the horizon, so it has one more entry than
    ``values``. The value at the horizon itself is the last interval's value.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        b = self.breakpoints
        if len(b) != len(self.values) + 1 or len(self.values) < 1:
            raise CascadeError("need len(breakpoints) == len(values) + 1 >= 2")
        if b[0] != 0:
            raise CascadeError("price breakpoints must start at t=0")
        if any(b1 <= b0 for b0, b1 in zip(b, b[1:])):
            raise CascadeError("price breakpoints must be strictly increasing")

    @property
    def horizon(self) -> float:
        return self.breakpoints[-1]

    def value_at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def cell_values(self, grid: TimeGrid) -> np.ndarray:
        """Price on every cell; fails if a breakpoint is not a grid node."""
        if abs(grid.horizon - self.horizon) > 1e-12 * grid.horizon:
            raise CascadeError(f"price horizon {self.horizon} != grid horizon {grid.horizon}")
        c = np.empty(grid.n_cells)
        bounds = [grid.node_index(t) for t in self.breakpoints]
        for k0, k1, v in zip(bounds, bounds[1:], self.values):
            c[k0:k1] = v
        return c


def constant_price(value: float, horizon: float) -> PriceSignal:
    return PriceSignal((0.0, float(horizon)), (float(value),))


# ---------------------------------------------------------------------------
#  Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlTrajectory:
    """Per-cell flows, ``u[k, i]`` for cell ``k`` and plant ``i+1``."""

    grid: TimeGrid
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2 or u.shape[0] != self.grid.n_cells:
            raise CascadeError(f"control must have shape (N={self.grid.n_cells}, I), "
                               f"got {u.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    def check_admissible(self, params: Sequence[PlantParams], tol: float = 0.0):
        pa = param_arrays(params)
        if self.u.shape[1] != len(params):
            raise CascadeError("control width does not match number of plants")
        low = self.u < pa.u_min - tol
        high = self.u > pa.u_max + tol
        if low.any() or high.any():
            k, i = np.argwhere(low | high)[0]
            raise CascadeError(f"control u[{k}, plant {i + 1}]={self.u[k, i]} outside "
                               f"[{pa.u_min[i]}, {pa.u_max[i]}]")
        return self

    def refine(self, factor: int) -> "ControlTrajectory":
        return ControlTrajectory(self.grid.refine(factor), np.repeat(self.u, factor, axis=0))


def constant_control(grid: TimeGrid, values: Sequence[float]) -> ControlTrajectory:
    return ControlTrajectory(grid, np.tile(np.asarray(values, dtype=float),
                                           (grid.n_cells, 1)))


@dataclass(frozen=True)
class Segment:
    """Interval of affine motion produced by the event-driven simulator."""

    t0: float
    t1: float
    V0: np.ndarray
    rate: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Node volumes ``V`` (N+1, I), cell-average spills ``s`` (N, I).

    ``V_mean`` holds exact cell averages of the volumes when the integrator
    knows them; otherwise the trapezoid rule on nodes is used.
    """

    grid: TimeGrid
    V: np.ndarray
    s: np.ndarray
    V_mean: Optional[np.ndarray] = None
    segments: tuple[Segment, ...] = field(default=(), repr=False)

    def __post_init__(self):
        N = self.grid.n_cells
        if self.V.shape[0] != N + 1 or self.s.shape[0] != N or self.V.shape[1] != self.s.shape[1]:
            raise CascadeError("trajectory arrays do not match the grid")
        if not np.all(np.isfinite(self.V)):
            raise CascadeError("trajectory has non-finite volumes")
        if np.any(self.s < 0):
            raise CascadeError("spills must be nonnegative")

    @property
    def cell_mean_volume(self) -> np.ndarray:
        if self.V_mean is not None:
            return self.V_mean
        return 0.5 * (self.V[1:] + self.V[:-1])


# ---------------------------------------------------------------------------
#  Objective and balance
# ---------------------------------------------------------------------------

def head(j: int, V: np.ndarray, params: Sequence[PlantParams],
         topology: CascadeTopology) -> float:
    """Head of plant ``j``: own level minus the downstream level (if any)."""
    p = params[j - 1]
    value = V[j - 1] / p.S + p.h
    d = topology.downstream[j - 1]
    if d is not None:
        q = params[d - 1]
        value -= V[d - 1] / q.S + q.h
    return value


def heads(V: np.ndarray, params: Sequence[PlantParams],
          topology: CascadeTopology) -> np.ndarray:
    """Vectorised :func:`head` over the last axis of ``V`` (all plants)."""
    pa = param_arrays(params)
    level = V / pa.S + pa.h
    M = incidence_matrix(topology)
    return level - level @ M


def _check_grids(*objs):
    grids = {(o.grid.horizon, o.grid.n_cells) for o in objs}
    if len(grids) != 1:
        raise CascadeError(f"incompatible grids: {sorted(grids)}")


def objective(u: ControlTrajectory, traj: Trajectory, price: PriceSignal,
              params: Sequence[PlantParams], topology: CascadeTopology) -> float:
    """Profit ``sum_j int c u_j head_j(V) dt`` over the horizon.

    Per cell the control and price are constant and the head is affine in V,
    so each cell contributes ``c_k dt sum_j u_kj head_j(mean V over cell)``.
    """
    _check_grids(u, traj)
    _check_sizes(params, topology)
    c = price.cell_values(u.grid)
    H = heads(traj.cell_mean_volume, params, topology)
    return float(u.grid.dt * np.sum(c * np.sum(u.u * H, axis=1)))


def net_inflow(u: np.ndarray, s: np.ndarray, params: Sequence[PlantParams],
               topology: CascadeTopology) -> np.ndarray:
    """Right-hand side ``A - u - s + M (u + s)`` row-wise."""
    pa = param_arrays(params)
    M = incidence_matrix(topology)
    out = u + s
    return pa.A - out + out @ M.T


def water_balance_residual(traj: Trajectory, u: ControlTrajectory,
                           params: Sequence[PlantParams], topology: CascadeTopology,
                           per_node: bool = False):
    """Deviation of the node volumes from the integrated water balance.

    Returns the max over nodes of ``|V(t_k) - V(0) - int_0^t_k rhs dt|`` or,
    with ``per_node``, the vector of per-node max-norms.
    """
    _check_grids(u, traj)
    rhs = net_inflow(u.u, traj.s, params, topology)
    integrated = np.vstack([np.zeros(rhs.shape[1]), np.cumsum(rhs * u.grid.dt, axis=0)])
    res = np.max(np.abs(traj.V - traj.V[0] - integrated), axis=1)
    return res if per_node else float(res.max())
