"""Deterministic continuum engine: explicit Euler for n, conservative upwind flux scheme for c."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .chemo import chemo_kernel, chemo_step, stability_limit
from .grid import (Grid, ModelParams, NumericalError, StepSizeError, disc_halfwidths,
                   kill_kernel, psi_scalar, total_mass, vessel_weights)
from .record import RunRecord

OK, NEG_N, CFL_C, NEG_C, NEG_PHI, NONFINITE, STOPPED = range(7)


@dataclass
class ContinuumState:
    n: np.ndarray
    c: np.ndarray
    phi: np.ndarray
    t: float = 0.0


@njit(cache=True)
def face_flux(c0, c1, w0, w1, f0, f1, beta_c, gamma_c, w_max, chi):
    """Flux into the lower-index site across one face.

    Random part: centred form when both sides are at or below w_max, donor
    form otherwise (the centred form is ill-defined across the kink).
    """
    b = gamma_c * (f1 - f0) / chi
    bp = max(b, 0.0)
    bm = max(-b, 0.0)
    F = -bp * c0 * psi_scalar(w1, w_max) + bm * c1 * psi_scalar(w0, w_max)
    if w0 <= w_max and w1 <= w_max:
        wf = 0.5 * (w0 + w1)
        cf = 0.5 * (c0 + c1)
        F += beta_c * psi_scalar(wf, w_max) * (c1 - c0) / chi + beta_c * cf * (w1 - w0) / (w_max * chi)
    else:
        F += beta_c * (psi_scalar(w0, w_max) * c1 - psi_scalar(w1, w_max) * c0) / chi
    return F


@njit(cache=True)
def step_n_kernel(n, K, out, tau, alpha_n, mu_n, zeta_n, rho_n):
    P, Q = n.shape
    lo = np.inf
    for i in range(P):
        for j in range(Q):
            v = n[i, j] * (1.0 + tau * (alpha_n - mu_n * rho_n - zeta_n * K[i, j]))
            out[i, j] = v
            if v < lo:
                lo = v
    return lo


@njit(cache=True)
def step_c_kernel(c, n, phi, src, out, rate, tau, chi, alpha_c, mu_c, beta_c, gamma_c,
                  w_max, rho_c, phi_tot):
    """Fills ``out`` with c at the next step; ``rate`` receives per-site outflow rates.

    Returns (max outflow fraction, its flat index, min(out)).
    """
    P, Q = c.shape
    k = tau / chi
    bc = beta_c / chi
    for i in range(P):
        for j in range(Q):
            out[i, j] = c[i, j] + tau * (alpha_c * phi_tot * src[i, j] - mu_c * rho_c * c[i, j])
            rate[i, j] = mu_c * rho_c
    for i in range(P - 1):
        for j in range(Q):
            w0 = n[i, j] + c[i, j]
            w1 = n[i + 1, j] + c[i + 1, j]
            F = face_flux(c[i, j], c[i + 1, j], w0, w1, phi[i, j], phi[i + 1, j],
                          beta_c, gamma_c, w_max, chi)
            out[i, j] += k * F
            out[i + 1, j] -= k * F
            b = gamma_c * (phi[i + 1, j] - phi[i, j]) / chi
            rate[i, j] += (max(b, 0.0) + bc) * psi_scalar(w1, w_max) / chi
            rate[i + 1, j] += (max(-b, 0.0) + bc) * psi_scalar(w0, w_max) / chi
    for i in range(P):
        for j in range(Q - 1):
            w0 = n[i, j] + c[i, j]
            w1 = n[i, j + 1] + c[i, j + 1]
            F = face_flux(c[i, j], c[i, j + 1], w0, w1, phi[i, j], phi[i, j + 1],
                          beta_c, gamma_c, w_max, chi)
            out[i, j] += k * F
            out[i, j + 1] -= k * F
            b = gamma_c * (phi[i, j + 1] - phi[i, j]) / chi
            rate[i, j] += (max(b, 0.0) + bc) * psi_scalar(w1, w_max) / chi
            rate[i, j + 1] += (max(-b, 0.0) + bc) * psi_scalar(w0, w_max) / chi
    worst = 0.0
    where = 0
    lo = np.inf
    for i in range(P):
        for j in range(Q):
            if tau * rate[i, j] > worst:
                worst = tau * rate[i, j]
                where = i * Q + j
            if out[i, j] < lo:
                lo = out[i, j]
    return worst, where, lo


@njit(cache=True)
def observe(n, c, phi, vol, cen, mar, wc, wm, row):
    rn = 0.0
    rc = 0.0
    pt = 0.0
    ic = 0.0
    im = 0.0
    P, Q = n.shape
    for i in range(P):
        for j in range(Q):
            rn += n[i, j]
            rc += c[i, j]
            pt += phi[i, j]
            if cen[i, j]:
                ic += c[i, j]
            elif mar[i, j]:
                im += c[i, j]
    row[1] = rn * vol
    row[2] = rc * vol
    row[3] = pt * vol
    row[5] = ic * vol
    row[6] = im * vol
    row[4] = wc * row[5] + wm * row[6]


@njit(cache=True)
def run_kernel(n, c, phi, halfw, src, pr, chi, vol, nsteps, every, cen, mar, wc, wm,
               snap_steps, snaps, early_stop):
    """Time loop. Returns (rows, rows_written, status, step, flat site, value)."""
    alpha_n, mu_n, zeta_n, alpha_c, mu_c, beta_c, gamma_c, beta_phi, alpha_phi, kappa, w_max, tau, unit = pr
    secretion = alpha_phi * unit
    P, Q = n.shape
    nn = np.empty_like(n)
    nc = np.empty_like(c)
    nphi = np.empty_like(phi)
    K = np.empty_like(c)
    B = np.empty_like(c)
    rate = np.empty_like(c)
    rows = np.zeros((nsteps // every + 2, 7))
    obs = np.zeros(7)
    r = 0
    s = 0
    for k in range(nsteps + 1):
        observe(n, c, phi, vol, cen, mar, wc, wm, obs)
        if not (np.isfinite(obs[1]) and np.isfinite(obs[2]) and np.isfinite(obs[3])):
            return rows, r, NONFINITE, k, 0, 0.0
        stop = early_stop and obs[1] < 0.5
        if k % every == 0 or k == nsteps or stop:
            obs[0] = k * tau
            rows[r, :] = obs
            r += 1
        while s < snap_steps.shape[0] and snap_steps[s] == k:
            snaps[s, 0] = n
            snaps[s, 1] = c
            snaps[s, 2] = phi
            s += 1
        if k == nsteps:
            break
        if stop:
            return rows, r, STOPPED, k, 0, 0.0
        rho_n = obs[1]
        rho_c = obs[2]
        phi_tot = obs[3]
        kill_kernel(c, halfw, vol, K, B)
        lo = step_n_kernel(n, K, nn, tau, alpha_n, mu_n, zeta_n, rho_n)
        if lo < 0:
            return rows, r, NEG_N, k, np.argmin(nn), lo
        worst, where, lo = step_c_kernel(c, n, phi, src, nc, rate, tau, chi, alpha_c, mu_c,
                                         beta_c, gamma_c, w_max, rho_c, phi_tot)
        if worst > 1.0:
            return rows, r, CFL_C, k, where, worst
        if lo < 0:
            return rows, r, NEG_C, k, np.argmin(nc), lo
        lo = chemo_kernel(phi, n, nphi, tau, chi, beta_phi, secretion, kappa)
        if lo < 0:
            return rows, r, NEG_PHI, k, np.argmin(nphi), lo
        n, nn = nn, n
        c, nc = nc, c
        phi, nphi = nphi, phi
    return rows, r, OK, nsteps, 0, 0.0


def source_field(params: ModelParams, grid: Grid) -> np.ndarray:
    """Vessel indicator r / phi_tot: interpolation weights per vessel divided by the site volume."""
    W = vessel_weights(params.vessels, grid)
    return np.ascontiguousarray(W.sum(axis=0) / grid.cell_volume)


def _prep(state: ContinuumState, grid: Grid):
    return tuple(np.ascontiguousarray(grid.as2d(np.asarray(a, dtype=np.float64)))
                 for a in (state.n, state.c, state.phi))


def step_n(state: ContinuumState, params: ModelParams, grid: Grid, tau=None) -> np.ndarray:
    tau = params.tau if tau is None else tau
    n, c, _ = _prep(state, grid)
    K = np.empty_like(c)
    kill_kernel(c, disc_halfwidths(params.theta, grid), grid.cell_volume, K, np.empty_like(c))
    out = np.empty_like(n)
    lo = step_n_kernel(n, K, out, tau, params.alpha_n, params.mu_n, params.zeta_n,
                       n.sum() * grid.cell_volume)
    if lo < 0:
        i = int(np.argmin(out))
        raise StepSizeError(f"tumour density negative at site {np.unravel_index(i, grid.shape)}: {lo:.4g}")
    return out.reshape(grid.shape)


def step_c(state: ContinuumState, params: ModelParams, grid: Grid, tau=None) -> np.ndarray:
    tau = params.tau if tau is None else tau
    n, c, phi = _prep(state, grid)
    out = np.empty_like(c)
    rate = np.empty_like(c)
    vol = grid.cell_volume
    worst, where, lo = step_c_kernel(c, n, phi, source_field(params, grid), out, rate, tau,
                                     grid.chi, params.alpha_c, params.mu_c, params.beta_c,
                                     params.gamma_c, params.w_max, c.sum() * vol, phi.sum() * vol)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite T-cell density")
    site = np.unravel_index(where, grid.shape)
    if worst > 1.0:
        raise StepSizeError(f"T-cell outflow fraction {worst:.4g} > 1 at site {site}; "
                            f"admissible tau <= {tau / worst:.4g}")
    if lo < 0:
        raise StepSizeError(f"T-cell density negative: {lo:.4g}")
    return out.reshape(grid.shape)


def step(state: ContinuumState, params: ModelParams, grid: Grid) -> ContinuumState:
    """Advance all three fields one step from the same step-start state."""
    n1 = step_n(state, params, grid)
    c1 = step_c(state, params, grid)
    phi1 = chemo_step(state.phi, state.n, params, grid)
    return ContinuumState(n1, c1, phi1, state.t + params.tau)


def run_continuum(params: ModelParams, grid: Grid, state: ContinuumState, regions,
                  output_every: int = 100, snapshot_times=(), early_stop: bool = False) -> RunRecord:
    if params.tau > stability_limit(params, grid):
        raise StepSizeError("tau exceeds the chemoattractant stability limit")
    n, c, phi = (a.copy() for a in _prep(state, grid))
    nsteps = params.n_steps
    snap_t = sorted(set(float(t) for t in snapshot_times))
    snap_steps = np.array([int(round(t / params.tau)) for t in snap_t], dtype=np.int64)
    snaps = np.zeros((len(snap_t), 3) + n.shape)
    cen = grid.as2d(regions.centre).astype(np.bool_)
    mar = grid.as2d(regions.margin).astype(np.bool_)
    rows, nr, status, k, where, val = run_kernel(
        n, c, phi, disc_halfwidths(params.theta, grid), source_field(params, grid),
        params.as_array(), grid.chi, grid.cell_volume, nsteps, int(output_every),
        np.ascontiguousarray(cen), np.ascontiguousarray(mar), regions.w_centre, regions.w_margin,
        snap_steps, snaps, bool(early_stop))
    _raise_status(status, k, where, val, params, grid)
    snapshots = {}
    for s, t in enumerate(snap_t):
        if snap_steps[s] <= k:
            for f, name in enumerate(("n", "c", "phi")):
                snapshots[(name, t)] = snaps[s, f].reshape(grid.shape).copy()
    return RunRecord.from_rows(rows[:nr], snapshots)


def _raise_status(status, k, where, val, params, grid):
    if status in (OK, STOPPED):
        return
    site = np.unravel_index(int(where), grid.shape)
    t = k * params.tau
    if status == NEG_N:
        raise StepSizeError(f"tumour density negative at step {k} (t={t:g}) site {site}: {val:.4g}")
    if status == CFL_C:
        raise StepSizeError(f"T-cell outflow fraction {val:.4g} > 1 at step {k} (t={t:g}) site {site}; "
                            f"admissible tau <= {params.tau / val:.4g}")
    if status == NEG_C:
        raise StepSizeError(f"T-cell density negative at step {k} (t={t:g}) site {site}: {val:.4g}")
    if status == NEG_PHI:
        raise NumericalError(f"chemoattractant negative at step {k} (t={t:g}) site {site}: {val:.4g}")
    raise NumericalError(f"non-finite totals at step {k} (t={t:g})")


__all__ = ["ContinuumState", "step_n", "step_c", "step", "run_continuum", "source_field",
           "total_mass"]
