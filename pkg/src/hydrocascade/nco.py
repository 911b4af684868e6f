"""Residual checks of the necessary optimality conditions.

Multipliers are stored on the time grid: ``p`` by its node values (right
continuous, so a jump at a node sits in the cell that ends there), and the
measures ``dmu``, ``dxi`` as per-cell increments.  The conditions checked are

    dp_i = dxi_i - lam c (u_i - sum_{j in J(i)} u_j) / S_i dt - dmu_i
    (V_i - Vmax_i) dxi_i = 0,  (V_i - Vmin_i) dmu_i = 0,  dmu_i >= 0
    p(0) = p(T),  s_i (p_i - p_down(i)) = 0,  lam + |p(T)| + sum mu_i(T) = 1

and maximisation of ``sum_i sigma_i u_i`` over the control box, with the
switching function ``sigma_i = p_down(i) - p_i + lam c head_i(V)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (CascadeError, CascadeTopology, ControlTrajectory, PlantParams,
                   PriceSignal, TimeGrid, Trajectory, heads, incidence_matrix,
                   param_arrays)


@dataclass(frozen=True)
class AdjointBundle:
    """``lam >= 0``; ``p`` of shape (N+1, I); ``mu_inc``, ``xi_inc`` of shape (N, I)."""

    grid: TimeGrid
    lam: float
    p: np.ndarray
    mu_inc: np.ndarray
    xi_inc: np.ndarray

    def __post_init__(self):
        for name in ("p", "mu_inc", "xi_inc"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        N = self.grid.n_cells
        if self.p.ndim != 2 or self.p.shape[0] != N + 1:
            raise CascadeError(f"p must have {N + 1} rows, got shape {self.p.shape}")
        n = self.p.shape[1]
        for name in ("mu_inc", "xi_inc"):
            if getattr(self, name).shape != (N, n):
                raise CascadeError(f"{name} must have shape {(N, n)}")
        if not self.lam >= 0:
            raise CascadeError("lambda must be nonnegative")

    @property
    def p_inc(self) -> np.ndarray:
        return np.diff(self.p, axis=0)

    @property
    def mu_end(self) -> np.ndarray:
        return self.mu_inc.sum(axis=0)

    def scaled(self, kappa: float) -> "AdjointBundle":
        if kappa <= 0:
            raise CascadeError("scale must be positive")
        return AdjointBundle(self.grid, kappa * self.lam, kappa * self.p,
                             kappa * self.mu_inc, kappa * self.xi_inc)

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "p": self.p.tolist(),
                "mu_inc": self.mu_inc.tolist(), "xi_inc": self.xi_inc.tolist()}

    @classmethod
    def from_dict(cls, grid: TimeGrid, doc: dict) -> "AdjointBundle":
        try:
            return cls(grid, float(doc["lambda"]), doc["p"], doc["mu_inc"], doc["xi_inc"])
        except KeyError as exc:
            raise CascadeError(f"multiplier document lacks {exc.args[0]!r}") from None


@dataclass(frozen=True)
class SwitchingFunction:
    grid: TimeGrid
    sigma: np.ndarray  # (N+1, I)

    def __post_init__(self):
        if not np.all(np.isfinite(self.sigma)):
            raise CascadeError("switching function is not finite")


def _same_grid(bundle: AdjointBundle, *others):
    for o in others:
        if o.grid != bundle.grid:
            raise CascadeError("multipliers and trajectory live on different grids")


def _down_values(x: np.ndarray, topology: CascadeTopology) -> np.ndarray:
    """Columns of the downstream plant, zero for terminal plants."""
    down = topology.down_index
    out = np.zeros_like(x)
    has = down >= 0
    out[..., has] = x[..., down[has]]
    return out


def adjoint_residual(bundle: AdjointBundle, traj: Trajectory, u: ControlTrajectory,
                     price: PriceSignal, params: Sequence[PlantParams],
                     topology: CascadeTopology, per_cell: bool = False):
    _same_grid(bundle, traj, u)
    if bundle.p.shape[1] != topology.n_plants:
        raise CascadeError("multiplier dimension does not match the cascade")
    pa = param_arrays(params)
    routed = u.u @ incidence_matrix(topology).T  # sum of upstream u, per plant
    c = price.cell_values(bundle.grid)
    drift = bundle.lam * c[:, None] * (u.u - routed) / pa.S * bundle.grid.dt
    r = bundle.p_inc - bundle.xi_inc + drift + bundle.mu_inc
    return np.abs(r) if per_cell else float(np.max(np.abs(r), initial=0.0))


def complementarity_residual(bundle: AdjointBundle, traj: Trajectory,
                             params: Sequence[PlantParams]) -> tuple[float, float]:
    """``(xi_residual, mu_residual)``; raises if some ``dmu < 0``."""
    _same_grid(bundle, traj)
    if np.any(bundle.mu_inc < 0):
        k, i = np.argwhere(bundle.mu_inc < 0)[0]
        raise CascadeError(f"negative mu increment in cell {k}, plant {i + 1}")
    pa = param_arrays(params)
    Vmid = 0.5 * (traj.V[1:] + traj.V[:-1])
    xi = np.abs(Vmid - pa.V_max) * np.abs(bundle.xi_inc)
    mu = np.abs(Vmid - pa.V_min) * np.abs(bundle.mu_inc)
    return float(np.max(xi, initial=0.0)), float(np.max(mu, initial=0.0))


def periodicity_check(bundle: AdjointBundle) -> float:
    return float(np.linalg.norm(bundle.p[0] - bundle.p[-1]))


def spill_orthogonality(bundle: AdjointBundle, traj: Trajectory,
                        topology: CascadeTopology) -> float:
    """max over cells of ``s_i |p_i - p_down(i)|`` at both cell ends."""
    _same_grid(bundle, traj)
    dp = np.abs(bundle.p - _down_values(bundle.p, topology))
    worst = np.maximum(dp[:-1], dp[1:])
    return float(np.max(traj.s * worst, initial=0.0))


def nontriviality_gap(bundle: AdjointBundle) -> float:
    return abs(bundle.lam + float(np.linalg.norm(bundle.p[-1]))
               + float(bundle.mu_end.sum()) - 1.0)


def normalize_multipliers(bundle: AdjointBundle) -> AdjointBundle:
    """Rescale so that ``lam + |p(T)| + sum mu(T) = 1``."""
    total = bundle.lam + float(np.linalg.norm(bundle.p[-1])) + float(bundle.mu_end.sum())
    if total <= 0:
        raise CascadeError("all multipliers vanish; nothing to normalise")
    return bundle.scaled(1.0 / total)


def switching_function(bundle: AdjointBundle, traj: Trajectory, price: PriceSignal,
                       params: Sequence[PlantParams],
                       topology: CascadeTopology) -> SwitchingFunction:
    _same_grid(bundle, traj)
    c = price.value_at(bundle.grid.nodes)
    sigma = (_down_values(bundle.p, topology) - bundle.p
             + bundle.lam * c[:, None] * heads(traj.V, params, topology))
    return SwitchingFunction(bundle.grid, sigma)


def detect_switches(u: np.ndarray, sigma: Optional[np.ndarray] = None,
                    sigma_tol: float = 0.0, u_tol: float = 1e-9) -> list[set]:
    """Cells where a plant's control or the sign of its switching function changes."""
    u = np.asarray(u, dtype=float)
    out = []
    for i in range(u.shape[1]):
        cells = set((np.flatnonzero(np.abs(np.diff(u[:, i])) > u_tol) + 1).tolist())
        if sigma is not None:
            sgn = np.where(sigma[:, i] > sigma_tol, 1, np.where(sigma[:, i] < -sigma_tol, -1, 0))
            cells |= set((np.flatnonzero(np.diff(sgn) != 0) + 1).tolist())
        out.append(cells)
    return out


def hamiltonian_max_check(sigma: SwitchingFunction, u: ControlTrajectory,
                          params: Sequence[PlantParams], tol: Optional[float] = None,
                          u_tol: float = 1e-9, exclude_switches: bool = True):
    """Fraction of (cell, plant) pairs where ``u`` does not maximise ``sigma u``.

    Uses sigma at the left node of each cell.  Returns ``(fraction, cells)``
    with ``cells`` a sorted list of violating ``(cell, plant)`` pairs, plants
    1-based.
    """
    pa = param_arrays(params)
    s = sigma.sigma[:-1]
    if tol is None:
        tol = 1e-6 * (1.0 + float(np.max(np.abs(sigma.sigma), initial=0.0)))
    utol = u_tol * (1.0 + np.maximum(np.abs(pa.u_min), np.abs(pa.u_max)))
    bad = ((s > tol) & (u.u < pa.u_max - utol)) | ((s < -tol) & (u.u > pa.u_min + utol))
    mask = np.ones_like(bad)
    if exclude_switches:
        N = bad.shape[0]
        for i, cells in enumerate(detect_switches(u.u, sigma.sigma[:-1], tol, u_tol)):
            for k in cells:
                mask[max(k - 1, 0):min(k + 2, N), i] = False
    hits = bad & mask
    cells = [(int(k), int(i) + 1) for k, i in np.argwhere(hits)]
    return float(hits.sum()) / bad.size, cells


@dataclass(frozen=True)
class NcoReport:
    adjoint_residual: float
    xi_residual: float
    mu_residual: float
    periodicity_gap: float
    spill_orthogonality_residual: float
    nontriviality_gap: float
    hamiltonian_violation_fraction: float
    violating_cells: list = field(default_factory=list)

    def passed(self, tol: float = 1e-6) -> bool:
        return (max(self.adjoint_residual, self.xi_residual, self.mu_residual,
                    self.periodicity_gap, self.spill_orthogonality_residual,
                    self.nontriviality_gap) <= tol
                and self.hamiltonian_violation_fraction == 0.0)

    def as_dict(self) -> dict:
        return {"adjoint_residual": self.adjoint_residual,
                "complementarity_xi": self.xi_residual,
                "complementarity_mu": self.mu_residual,
                "periodicity_gap": self.periodicity_gap,
                "spill_orthogonality": self.spill_orthogonality_residual,
                "nontriviality_gap": self.nontriviality_gap,
                "hamiltonian_violation_fraction": self.hamiltonian_violation_fraction,
                "violating_cells": [list(c) for c in self.violating_cells]}


def check_nco(bundle: AdjointBundle, traj: Trajectory, u: ControlTrajectory,
              price: PriceSignal, params: Sequence[PlantParams],
              topology: CascadeTopology, tol: Optional[float] = None) -> NcoReport:
    xi, mu = complementarity_residual(bundle, traj, params)
    sig = switching_function(bundle, traj, price, params, topology)
    frac, cells = hamiltonian_max_check(sig, u, params, tol)
    return NcoReport(
        adjoint_residual(bundle, traj, u, price, params, topology), xi, mu,
        periodicity_check(bundle), spill_orthogonality(bundle, traj, topology),
        nontriviality_gap(bundle), frac, cells)


def _arc_overlap(a: np.ndarray, b: np.ndarray, lo: float, hi: float) -> np.ndarray:
    out = np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)
    # switch times like (12 - 7.2)/3 land a rounding error off a node
    out[out < 1e-12 * (b - a)] = 0.0
    return out


def synthesize_example_multipliers(V0: float, n_cells: int = 320) -> AdjointBundle:
    """Multipliers of the two-plant example at periodic level ``V0`` (unnormalised, lam=1).

    ``p2 = c V2 - Q2`` with the closed-form ``Q2``, ``p1 = p2``, ``mu = 0``;
    ``dxi2 = c dt + V2 dc`` on the full-reservoir arc (the ``V2 dc`` part is
    the atom 12 * 8 at the price step) and ``dxi1`` closes the adjoint
    equation of the always-full upstream plant.
    """
    from .example import HORIZON, PRICE, switching_times

    tau1, tau2 = switching_times(V0)
    grid = TimeGrid(HORIZON, n_cells)
    t = grid.nodes
    p2 = np.where(t < tau1, 2 * V0 + 12 + 6 * t,
                  np.where(t <= tau2, 12.0 * PRICE.value_at(t),
                           132.0 - 22.0 * (t - tau2)))
    # p is continuous at T (the price returns to its t=0 value there)
    p2[-1] = 132.0 - 22.0 * (HORIZON - tau2)
    p = np.column_stack([p2, p2])

    a, b = t[:-1], t[1:]
    c = PRICE.cell_values(grid)
    xi2 = c * _arc_overlap(a, b, tau1, tau2)
    step = grid.node_index(6.0)
    if tau1 <= 6.0 <= tau2:
        xi2[step - 1] += 12.0 * (11.0 - 3.0)
    xi1 = np.diff(p2) + c * grid.dt  # u1 = 1, S1 = 1, no upstream plants
    zeros = np.zeros((n_cells, 2))
    return AdjointBundle(grid, 1.0, p, zeros, np.column_stack([xi1, xi2]))


def level_crossings(u: np.ndarray, grid: TimeGrid, levels: Sequence[float]) -> list[float]:
    """Left node of the first cell where ``u`` rises above each level in turn.

    ``levels`` must be visited in order, e.g. midpoints between successive
    bang / singular values; smeared switches are then located to a cell.
    """
    u = np.asarray(u, dtype=float)
    t = grid.nodes[:-1]
    out, start = [], 0
    for lv in levels:
        above = np.flatnonzero(u[start:] > lv)
        if above.size == 0:
            raise CascadeError(f"control never exceeds {lv} after t={t[start]:g}")
        start += int(above[0])
        out.append(float(t[start]))
    return out
