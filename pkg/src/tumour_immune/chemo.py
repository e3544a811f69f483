"""Explicit diffusion/secretion/decay update of the chemoattractant.

Zero-flux boundaries use a ghost layer mirroring each boundary site, so the
discrete Laplacian sums to zero over the lattice and mass changes only
through secretion and decay.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .grid import Grid, ModelParams, NumericalError, StepSizeError


def stability_limit(params: ModelParams, grid: Grid) -> float:
    if not params.beta_phi > 0:
        return float("inf")
    return grid.chi**2 / (2 * grid.dim * params.beta_phi)


@njit(cache=True)
def chemo_kernel(phi, n, out, tau, chi, beta_phi, secretion, kappa):
    """out = phi + tau*(beta_phi*L phi + secretion*n - kappa*phi); returns min(out)."""
    P, Q = phi.shape
    inv = beta_phi / (chi * chi)
    lo = np.inf
    for i in range(P):
        for j in range(Q):
            p = phi[i, j]
            lap = 0.0
            if i > 0:
                lap += phi[i - 1, j] - p
            if i < P - 1:
                lap += phi[i + 1, j] - p
            if Q > 1:
                if j > 0:
                    lap += phi[i, j - 1] - p
                if j < Q - 1:
                    lap += phi[i, j + 1] - p
            v = p + tau * (inv * lap + secretion * n[i, j] - kappa * p)
            out[i, j] = v
            if v < lo:
                lo = v
    return lo


def chemo_step(phi: np.ndarray, n: np.ndarray, params: ModelParams, grid: Grid,
               tau: float | None = None) -> np.ndarray:
    """One explicit step; ``n`` is the tumour density at the start of the step."""
    tau = params.tau if tau is None else tau
    tmax = stability_limit(params, grid)
    if tau > tmax:
        raise StepSizeError(f"tau = {tau:g} exceeds the stability limit {tmax:.4e}")
    if np.any(n < 0):
        raise ValueError("tumour density must be nonnegative")
    p2 = np.ascontiguousarray(grid.as2d(np.asarray(phi, dtype=np.float64)))
    n2 = np.ascontiguousarray(grid.as2d(np.asarray(n, dtype=np.float64)))
    out = np.empty_like(p2)
    lo = chemo_kernel(p2, n2, out, tau, grid.chi, params.beta_phi,
                      params.alpha_phi * params.phi_unit, params.kappa_phi)
    if lo < 0:
        raise NumericalError(f"chemoattractant went negative (min {lo:.3g})")
    return out.reshape(grid.shape)
