"""Compiled inner loops: implicit Euler with exponential spill and its adjoint.

One implicit Euler step of ``dV_i = A_i - u_i - s_i(V_i) + sum_{j in J(i)} (u_j + s_j)``
with ``s_i(V) = k_i exp(k_i (V - Vmax_i))`` is solved plant by plant in index
order (upstream first).  For plant ``i`` with explicit part ``b`` the update
``x + h k exp(k (x - Vmax)) = b`` has the closed form ``x = b - w / k`` where
``w`` is the Wright omega of ``L = log(h k^2) + k (b - Vmax)``, i.e. the root
of ``w + log(w) = L``.  The step spill is ``s = w / (k h)``.
"""
import math

import numpy as np
from numba import njit

EXP_CAP = 600.0


@njit(cache=True)
def wright_omega(L):
    """Root ``w > 0`` of ``w + log(w) = L`` (Newton on ``y = log w``)."""
    if L < -745.0:
        return 0.0
    if L < 1.0:
        y = L
    else:
        y = math.log(L)
    for _ in range(60):
        ey = math.exp(y)
        f = ey + y - L
        dy = f / (ey + 1.0)
        y -= dy
        if abs(dy) <= 1e-15 * (1.0 + abs(y)):
            break
    return math.exp(y)


@njit(cache=True)
def capped_exp(x):
    """exp(x), continued linearly (C^1) above ``EXP_CAP``."""
    if x <= EXP_CAP:
        return math.exp(x)
    return math.exp(EXP_CAP) * (1.0 + x - EXP_CAP)


@njit(cache=True)
def capped_exp_prime(x):
    return math.exp(min(x, EXP_CAP))


@njit(cache=True)
def implicit_step(V, u, A, Vmax, k, down, h, V_out, s_out, w_out):
    n = V.shape[0]
    add = np.zeros(n)
    for i in range(n):
        b = V[i] + h * (A[i] - u[i] + add[i])
        L = math.log(h * k[i] * k[i]) + k[i] * (b - Vmax[i])
        w = wright_omega(L)
        V_out[i] = b - w / k[i]
        s_out[i] = w / (k[i] * h)
        w_out[i] = w
        d = down[i]
        if d >= 0:
            add[d] += u[i] + s_out[i]


@njit(cache=True)
def advance_cell(V0, u, A, Vmax, k, down, dt, nsub):
    """Integrate one control cell with ``nsub`` equal steps.

    Returns end volumes, cell-average spill and cell-average volume
    (trapezoid over the sub-steps).
    """
    n = V0.shape[0]
    h = dt / nsub
    V = V0.copy()
    Vn = np.empty(n)
    s = np.empty(n)
    w = np.empty(n)
    s_mean = np.zeros(n)
    V_mean = np.zeros(n)
    for _ in range(nsub):
        implicit_step(V, u, A, Vmax, k, down, h, Vn, s, w)
        for i in range(n):
            s_mean[i] += s[i] / nsub
            V_mean[i] += 0.5 * (V[i] + Vn[i]) / nsub
            V[i] = Vn[i]
    return V, s_mean, V_mean


@njit(cache=True)
def simulate_fixed(V0, u, A, Vmax, k, down, dt, nsub):
    """Fixed-step run over all cells; returns sub-step volumes, spills, omegas."""
    N = u.shape[0]
    n = V0.shape[0]
    M = N * nsub
    h = dt / nsub
    Vs = np.empty((M + 1, n))
    ss = np.empty((M, n))
    ws = np.empty((M, n))
    Vs[0] = V0
    for m in range(M):
        implicit_step(Vs[m], u[m // nsub], A, Vmax, k, down, h, Vs[m + 1], ss[m], ws[m])
    return Vs, ss, ws


@njit(cache=True)
def penalized_cost(V0, u, A, Vmax, Vmin, S, elev, k, down, c, dt, nsub,
                   gamma, eps, alpha, u_anchor, V0_anchor, use_V0_anchor,
                   periodic_mode, rho, nu, want_grad):
    """Discretised penalised cost (to be minimised) and its exact gradient.

    periodic_mode 0: ``rho * max(0, |V(0)-V(T)|^2/2 - eps)^2``;
    periodic_mode 1: ``<nu, V(0)-V(T)> + rho/2 |V(0)-V(T)|^2``.

    Returns (parts, grad_V0, grad_u) with parts =
    [total, profit, lower_penalty, proximal, periodic, anchor].
    """
    N, n = u.shape
    M = N * nsub
    h = dt / nsub
    Vs, ss, ws = simulate_fixed(V0, u, A, Vmax, k, down, dt, nsub)
    sqg = math.sqrt(gamma)

    # d(-profit)/dV per cell, linear in V: -c dt (u_m - sum_{j in J(m)} u_j) / S_m
    gcell = np.zeros((N, n))
    profit = 0.0
    for kk in range(N):
        for i in range(n):
            gcell[kk, i] += u[kk, i] / S[i]
        for j in range(n):
            d = down[j]
            if d >= 0:
                gcell[kk, d] -= u[kk, j] / S[d]
        # profit from the cell-mean volume
        for i in range(n):
            vm = 0.0
            for q in range(nsub):
                vm += 0.5 * (Vs[kk * nsub + q, i] + Vs[kk * nsub + q + 1, i])
            vm /= nsub
            profit += c[kk] * dt * gcell[kk, i] * vm
        for j in range(n):
            hj = elev[j]
            d = down[j]
            if d >= 0:
                hj -= elev[d]
            profit += c[kk] * dt * u[kk, j] * hj

    low = 0.0
    for m in range(M + 1):
        wgt = h if 0 < m < M else 0.5 * h
        for i in range(n):
            low += wgt * (capped_exp(-gamma * (Vs[m, i] - Vmin[i] + eps)) - 1.0) / sqg

    prox = 0.0
    for kk in range(N):
        for i in range(n):
            du = u[kk, i] - u_anchor[kk, i]
            prox += alpha * dt * du * du

    gap = np.empty(n)
    g2 = 0.0
    for i in range(n):
        gap[i] = Vs[0, i] - Vs[M, i]
        g2 += gap[i] * gap[i]
    if periodic_mode == 0:
        viol = max(0.0, 0.5 * g2 - eps)
        per = rho * viol * viol
        dper = 2.0 * rho * viol * gap
    else:
        per = 0.5 * rho * g2
        for i in range(n):
            per += nu[i] * gap[i]
        dper = nu + rho * gap

    anc = 0.0
    if use_V0_anchor:
        for i in range(n):
            anc += 0.5 * (V0[i] - V0_anchor[i]) ** 2

    parts = np.array([-profit + low + prox + per + anc, profit, low, prox, per, anc])
    gV0 = np.zeros(n)
    gu = np.zeros((N, n))
    if not want_grad:
        return parts, gV0, gu

    # direct partials of the running cost wrt node volumes
    dV = np.zeros((M + 1, n))
    for m in range(M):
        kk = m // nsub
        for i in range(n):
            wv = 0.5 * c[kk] * dt / nsub
            dV[m, i] -= wv * gcell[kk, i]
            dV[m + 1, i] -= wv * gcell[kk, i]
    for m in range(M + 1):
        wgt = h if 0 < m < M else 0.5 * h
        for i in range(n):
            dV[m, i] += wgt * (-gamma / sqg) * capped_exp_prime(-gamma * (Vs[m, i] - Vmin[i] + eps))
    for i in range(n):
        dV[0, i] += dper[i]
        dV[M, i] -= dper[i]
        if use_V0_anchor:
            dV[0, i] += V0[i] - V0_anchor[i]

    # direct partials wrt controls
    for kk in range(N):
        for j in range(n):
            vm_j = 0.0
            for q in range(nsub):
                vm_j += 0.5 * (Vs[kk * nsub + q, j] + Vs[kk * nsub + q + 1, j])
            vm_j /= nsub
            hd = vm_j / S[j] + elev[j]
            d = down[j]
            if d >= 0:
                vm_d = 0.0
                for q in range(nsub):
                    vm_d += 0.5 * (Vs[kk * nsub + q, d] + Vs[kk * nsub + q + 1, d])
                vm_d /= nsub
                hd -= vm_d / S[d] + elev[d]
            gu[kk, j] = -c[kk] * dt * hd + 2.0 * alpha * dt * (u[kk, j] - u_anchor[kk, j])

    # reverse sweep through the implicit steps
    lam = dV[M].copy()
    bbar = np.empty(n)
    for m in range(M - 1, -1, -1):
        kk = m // nsub
        for i in range(n - 1, -1, -1):
            d = down[i]
            sbar = h * bbar[d] if d >= 0 else 0.0
            w = ws[m, i]
            bbar[i] = lam[i] / (1.0 + w) + sbar * w / ((1.0 + w) * h)
            gu[kk, i] += -h * bbar[i] + sbar
        for i in range(n):
            lam[i] = bbar[i] + dV[m, i]
    gV0[:] = lam
    return parts, gV0, gu
