"""Stochastic lattice engine with integer tumour and T-cell counts per site.

Cells sharing a site are exchangeable and their events are independent given
the step-start state, so per-cell categorical draws are sampled per site as
conditional binomials (multinomial splitting). Sites are visited in
row-major order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .chemo import chemo_kernel, stability_limit
from .continuum import observe
from .grid import (Grid, ModelParams, NumericalError, StepSizeError, disc_halfwidths,
                   kill_kernel, psi_scalar, vessel_weights)
from .record import RunRecord

OK, P_CHEMO, P_DEATH_C, P_INFLOW, P_TUMOUR, NEG_PHI, STOPPED = range(7)
_WHAT = {P_CHEMO: "chemotactic move", P_DEATH_C: "T-cell death",
         P_INFLOW: "T-cell inflow", P_TUMOUR: "tumour division/death"}


@dataclass
class AgentState:
    tumour: np.ndarray
    tcells: np.ndarray
    k: int = 0


@njit(cache=True)
def _split(cnt, probs, di, dj, i, j, out, rng):
    """Send each of ``cnt`` cells to (i+di[d], j+dj[d]) with probability probs[d]; rest stay."""
    left = cnt
    rest = 1.0
    for d in range(probs.shape[0]):
        p = probs[d]
        if p <= 0.0 or left == 0:
            continue
        q = p / rest if rest > p else 1.0
        m = rng.binomial(left, q)
        out[i + di[d], j + dj[d]] += m
        left -= m
        rest -= p
    out[i, j] += left


@njit(cache=True)
def site_psi(N, C, vol, w_max, Ps):
    P, Q = N.shape
    for i in range(P):
        for j in range(Q):
            Ps[i, j] = psi_scalar((N[i, j] + C[i, j]) / vol, w_max)


@njit(cache=True)
def random_move_kernel(C, Ps, p_dir, rng, out):
    P, Q = C.shape
    nd = 4 if Q > 1 else 2
    di = np.array([-1, 1, 0, 0])[:nd]
    dj = np.array([0, 0, -1, 1])[:nd]
    probs = np.zeros(nd)
    out[:, :] = 0
    for i in range(P):
        for j in range(Q):
            cnt = C[i, j]
            if cnt == 0:
                continue
            for d in range(nd):
                a = i + di[d]
                b = j + dj[d]
                if a < 0 or a >= P or b < 0 or b >= Q:
                    probs[d] = 0.0
                else:
                    probs[d] = p_dir * Ps[a, b]
            _split(cnt, probs, di, dj, i, j, out, rng)


@njit(cache=True)
def chemo_move_kernel(C, Ps, phi, coef, rng, out):
    """coef = gamma_c*tau/chi^2. Returns (flat site, total probability) of the first overflow, else (-1, 0)."""
    P, Q = C.shape
    nd = 4 if Q > 1 else 2
    di = np.array([-1, 1, 0, 0])[:nd]
    dj = np.array([0, 0, -1, 1])[:nd]
    probs = np.zeros(nd)
    out[:, :] = 0
    for i in range(P):
        for j in range(Q):
            cnt = C[i, j]
            if cnt == 0:
                continue
            tot = 0.0
            for d in range(nd):
                a = i + di[d]
                b = j + dj[d]
                if a < 0 or a >= P or b < 0 or b >= Q:
                    probs[d] = 0.0
                else:
                    dphi = phi[a, b] - phi[i, j]
                    probs[d] = coef * dphi * Ps[a, b] if dphi > 0 else 0.0
                tot += probs[d]
            if tot > 1.0:
                return i * Q + j, tot
            _split(cnt, probs, di, dj, i, j, out, rng)
    return -1, 0.0


@njit(cache=True)
def death_kernel(C, p, rng):
    P, Q = C.shape
    for i in range(P):
        for j in range(Q):
            if C[i, j] > 0:
                C[i, j] -= rng.binomial(C[i, j], p)


@njit(cache=True)
def inflow_kernel(C, W, p, rng):
    """One Bernoulli(p) arrival per vessel, placed on a site drawn from that vessel's weights."""
    V, P, Q = W.shape
    for v in range(V):
        if rng.random() < p:
            u = rng.random()
            acc = 0.0
            placed = False
            last_i = 0
            last_j = 0
            for i in range(P):
                for j in range(Q):
                    w = W[v, i, j]
                    if w > 0.0:
                        last_i = i
                        last_j = j
                        acc += w
                        if not placed and u < acc:
                            C[i, j] += 1
                            placed = True
            if not placed:
                C[last_i, last_j] += 1


@njit(cache=True)
def tumour_kernel(N, K, p_div, p_comp, zt, rng, out):
    """p_div = tau*alpha_n, p_comp = tau*mu_n*rho_n, zt = tau*zeta_n. Returns overflow (site, prob) or (-1, 0)."""
    P, Q = N.shape
    for i in range(P):
        for j in range(Q):
            cnt = N[i, j]
            out[i, j] = cnt
            if cnt == 0:
                continue
            p_die = p_comp + zt * K[i, j]
            if p_div + p_die > 1.0:
                return i * Q + j, p_div + p_die
            div = rng.binomial(cnt, p_div) if p_div > 0 else 0
            rest = cnt - div
            die = 0
            if rest > 0 and p_die > 0:
                die = rng.binomial(rest, min(1.0, p_die / (1.0 - p_div)))
            out[i, j] = cnt + div - die
    return -1, 0.0


@njit(cache=True)
def run_kernel(N, C, phi, halfw, W, pr, chi, vol, nsteps, every, cen, mar, wc, wm,
               snap_steps, snaps, early_stop, rng):
    alpha_n, mu_n, zeta_n, alpha_c, mu_c, beta_c, gamma_c, beta_phi, alpha_phi, kappa, w_max, tau, unit = pr
    P, Q = N.shape
    p_dir = beta_c * tau / (chi * chi)  # lambda / 2d
    coef = gamma_c * tau / (chi * chi)
    secretion = alpha_phi * unit
    N1 = np.empty_like(N)
    C1 = np.empty_like(C)
    C2 = np.empty_like(C)
    nd = np.empty(N.shape)
    cd = np.empty(N.shape)
    cf = np.empty(N.shape)
    Ps = np.empty(N.shape)
    K = np.empty(N.shape)
    B = np.empty(N.shape)
    nphi = np.empty_like(phi)
    rows = np.zeros((nsteps // every + 2, 7))
    obs = np.zeros(7)
    r = 0
    s = 0
    for k in range(nsteps + 1):
        for i in range(P):
            for j in range(Q):
                nd[i, j] = N[i, j] / vol
                cd[i, j] = C[i, j] / vol
                cf[i, j] = C[i, j]
        observe(nd, cd, phi, vol, cen, mar, wc, wm, obs)
        stop = early_stop and obs[1] == 0.0
        if k % every == 0 or k == nsteps or stop:
            obs[0] = k * tau
            rows[r, :] = obs
            r += 1
        while s < snap_steps.shape[0] and snap_steps[s] == k:
            snaps[s, 0] = nd
            snaps[s, 1] = cd
            snaps[s, 2] = phi
            s += 1
        if k == nsteps:
            break
        if stop:
            return rows, r, STOPPED, k, 0, 0.0
        rho_n = obs[1]
        rho_c = obs[2]
        phi_tot = obs[3]
        kill_kernel(cf, halfw, 1.0, K, B)
        site_psi(N, C, vol, w_max, Ps)
        random_move_kernel(C, Ps, p_dir, rng, C1)
        where, val = chemo_move_kernel(C1, Ps, phi, coef, rng, C2)
        if where >= 0:
            return rows, r, P_CHEMO, k, where, val
        p = tau * mu_c * rho_c
        if p > 1.0:
            return rows, r, P_DEATH_C, k, 0, p
        death_kernel(C2, p, rng)
        p = tau * alpha_c * phi_tot
        if p > 1.0:
            return rows, r, P_INFLOW, k, 0, p
        inflow_kernel(C2, W, p, rng)
        where, val = tumour_kernel(N, K, tau * alpha_n, tau * mu_n * rho_n, tau * zeta_n, rng, N1)
        if where >= 0:
            return rows, r, P_TUMOUR, k, where, val
        lo = chemo_kernel(phi, nd, nphi, tau, chi, beta_phi, secretion, kappa)
        if lo < 0:
            return rows, r, NEG_PHI, k, np.argmin(nphi), lo
        N, N1 = N1, N
        C, C2 = C2, C
        phi, nphi = nphi, phi
    return rows, r, OK, nsteps, 0, 0.0


def _as2d(a, grid, dtype):
    return np.ascontiguousarray(grid.as2d(np.asarray(a)).astype(dtype))


def _densities(state: AgentState, grid: Grid):
    vol = grid.cell_volume
    return state.tumour / vol, state.tcells / vol


def _site_psi(state: AgentState, params: ModelParams, grid: Grid) -> np.ndarray:
    N = _as2d(state.tumour, grid, np.int64)
    C = _as2d(state.tcells, grid, np.int64)
    Ps = np.empty(N.shape)
    site_psi(N, C, grid.cell_volume, params.w_max, Ps)
    return Ps


def tcell_random_move(state: AgentState, params: ModelParams, grid: Grid,
                      rng: np.random.Generator) -> AgentState:
    lam = params.lam(grid)
    if not 0 <= lam <= 1:
        raise StepSizeError(f"lambda = {lam:.4g} outside [0, 1]")
    C = _as2d(state.tcells, grid, np.int64)
    out = np.empty_like(C)
    random_move_kernel(C, _site_psi(state, params, grid), lam / (2 * grid.dim), rng, out)
    return AgentState(state.tumour.copy(), out.reshape(grid.shape), state.k)


def tcell_chemotactic_move(state: AgentState, phi: np.ndarray, params: ModelParams, grid: Grid,
                           rng: np.random.Generator, psi_from: AgentState | None = None) -> AgentState:
    """``psi_from`` supplies the step-start occupancy when called after phase A."""
    C = _as2d(state.tcells, grid, np.int64)
    out = np.empty_like(C)
    Ps = _site_psi(psi_from if psi_from is not None else state, params, grid)
    where, val = chemo_move_kernel(C, Ps, _as2d(phi, grid, np.float64),
                                   params.gamma_c * params.tau / grid.chi**2, rng, out)
    if where >= 0:
        raise StepSizeError(f"chemotactic move probabilities sum to {val:.4g} > 1 at site "
                            f"{np.unravel_index(where, grid.shape)}")
    return AgentState(state.tumour.copy(), out.reshape(grid.shape), state.k)


def tcell_inflow_death(state: AgentState, phi: np.ndarray, params: ModelParams, grid: Grid,
                       rng: np.random.Generator, rho_c: float | None = None,
                       phi_tot: float | None = None) -> AgentState:
    """Deaths of existing T cells, then arrivals at the vessels; totals default to the inputs' values."""
    vol = grid.cell_volume
    rho_c = float(state.tcells.sum()) if rho_c is None else rho_c
    phi_tot = float(np.sum(phi) * vol) if phi_tot is None else phi_tot
    p_death = params.tau * params.mu_c * rho_c
    p_in = params.tau * params.alpha_c * phi_tot
    if p_death > 1:
        raise StepSizeError(f"T-cell death probability {p_death:.4g} > 1")
    if p_in > 1:
        raise StepSizeError(f"T-cell inflow probability {p_in:.4g} > 1")
    C = _as2d(state.tcells, grid, np.int64)
    death_kernel(C, p_death, rng)
    if len(params.vessels):
        inflow_kernel(C, vessel_weights(params.vessels, grid), p_in, rng)
    return AgentState(state.tumour.copy(), C.reshape(grid.shape), state.k)


def tumour_step(state: AgentState, K: np.ndarray, params: ModelParams, grid: Grid,
                rng: np.random.Generator) -> AgentState:
    N = _as2d(state.tumour, grid, np.int64)
    out = np.empty_like(N)
    rho_n = float(N.sum())
    tau = params.tau
    if tau * params.alpha_n > 1:
        raise StepSizeError(f"division probability {tau * params.alpha_n:.4g} > 1")
    where, val = tumour_kernel(N, _as2d(K, grid, np.float64), tau * params.alpha_n,
                               tau * params.mu_n * rho_n, tau * params.zeta_n, rng, out)
    if where >= 0:
        raise StepSizeError(f"tumour event probability {val:.4g} > 1 at site "
                            f"{np.unravel_index(where, grid.shape)}")
    return AgentState(out.reshape(grid.shape), state.tcells.copy(), state.k)


def run_hybrid(params: ModelParams, grid: Grid, state: AgentState, phi0: np.ndarray, regions,
               seed: int, output_every: int = 100, snapshot_times=(), early_stop: bool = False) -> RunRecord:
    if params.tau > stability_limit(params, grid):
        raise StepSizeError("tau exceeds the chemoattractant stability limit")
    lam = params.lam(grid)
    if not 0 <= lam <= 1:
        raise StepSizeError(f"lambda = {lam:.4g} outside [0, 1]")
    if np.any(state.tumour < 0) or np.any(state.tcells < 0):
        raise ValueError("counts must be nonnegative")
    rng = np.random.default_rng(seed)
    N = _as2d(state.tumour, grid, np.int64)
    C = _as2d(state.tcells, grid, np.int64)
    phi = _as2d(phi0, grid, np.float64).copy()
    snap_t = sorted(set(float(t) for t in snapshot_times))
    snap_steps = np.array([int(round(t / params.tau)) for t in snap_t], dtype=np.int64)
    snaps = np.zeros((len(snap_t), 3) + N.shape)
    cen = np.ascontiguousarray(grid.as2d(regions.centre).astype(np.bool_))
    mar = np.ascontiguousarray(grid.as2d(regions.margin).astype(np.bool_))
    rows, nr, status, k, where, val = run_kernel(
        N, C, phi, disc_halfwidths(params.theta, grid), vessel_weights(params.vessels, grid),
        params.as_array(), grid.chi, grid.cell_volume, params.n_steps, int(output_every),
        cen, mar, regions.w_centre, regions.w_margin, snap_steps, snaps, bool(early_stop), rng)
    if status in _WHAT:
        site = np.unravel_index(int(where), grid.shape)
        raise StepSizeError(f"{_WHAT[status]} probability {val:.4g} > 1 at step {k} "
                            f"(t={k * params.tau:g}), site {site}, seed {seed}")
    if status == NEG_PHI:
        raise NumericalError(f"chemoattractant negative at step {k}, seed {seed}")
    snapshots = {}
    for s, t in enumerate(snap_t):
        if snap_steps[s] <= k:
            for f, name in enumerate(("n", "c", "phi")):
                snapshots[(name, t)] = snaps[s, f].reshape(grid.shape).copy()
    return RunRecord.from_rows(rows[:nr], snapshots, seeds=(seed,))
