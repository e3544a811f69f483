"""Lattice geometry, model parameters and shared field operations.

Fields are plain numpy arrays shaped ``grid.shape``: ``(P,)`` in 1D and
``(P, P)`` in 2D.  Densities are counts divided by the site volume
``chi**dim``.  The numba kernels operate on 2D views; a 1D field is viewed
as ``(P, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from numba import njit

DEFAULT_VESSELS = ((0.26, 0.74), (0.26, 0.26), (0.74, 0.74), (0.74, 0.26))


class ConfigError(ValueError):
    """Invalid configuration or parameter set."""


class StepSizeError(RuntimeError):
    """A time step would produce a probability above one or a negative density."""


class NumericalError(RuntimeError):
    """Non-finite values or a broken internal invariant."""


@dataclass(frozen=True)
class Grid:
    dim: int = 2
    P: int = 61
    ell: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.P) != self.P or self.P < 3:
            raise ConfigError(f"P must be an integer >= 3, got {self.P}")
        if not self.ell > 0:
            raise ConfigError(f"ell must be positive, got {self.ell}")

    @property
    def chi(self) -> float:
        return self.ell / (self.P - 1)

    @property
    def cell_volume(self) -> float:
        return self.chi ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.P,) * self.dim

    def coords(self) -> tuple:
        """Site coordinates, one array per axis, each shaped like a field."""
        x = np.arange(self.P) * self.chi
        if self.dim == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def as2d(self, f: np.ndarray) -> np.ndarray:
        return f.reshape(self.P, -1)


@dataclass(frozen=True, kw_only=True)
class ModelParams:
    """Rates and constants; units are cm, day, cells and chemokine units.

    ``phi_unit`` converts per-site chemokine amounts into the chemokine units
    in which ``alpha_phi``, ``alpha_c`` and ``gamma_c`` are expressed: the
    initial field is ``90 * phi_unit / chi**2`` at its peak and the secretion
    term is ``alpha_phi * phi_unit * n``.
    """

    zeta_n: float
    alpha_n: float = 1.5
    mu_n: float = 1.25e-5
    theta: float = 0.048
    alpha_c: float = 6.0
    mu_c: float = 6e-6
    beta_c: float = 1e-3
    gamma_c: float = 2e-3
    beta_phi: float = 0.1
    alpha_phi: float = 1.5
    kappa_phi: float = 2.0
    w_max: float = 2.96e5
    A: float = 1.0
    tau: float = 1e-4
    t_f: float = 15.0
    phi_unit: float = 1.0 / 72.0
    vessels: tuple = field(default=DEFAULT_VESSELS)

    @classmethod
    def names(cls) -> list:
        return [f.name for f in fields(cls)]

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_f / self.tau))

    def lam(self, grid: Grid) -> float:
        return self.beta_c * 2 * grid.dim * self.tau / grid.chi**2

    def nu(self, grid: Grid, phimax: float) -> float:
        return self.gamma_c * 2 * grid.dim * phimax * self.tau / grid.chi**2

    def validate(self, grid: Grid) -> None:
        for f in fields(self):
            if f.name == "vessels":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or math.isnan(v):
                raise ConfigError(f"{f.name} must be a number, got {v!r}")
            if v < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {v}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.w_max > 0:
            raise ConfigError("w_max must be positive")
        if not 0 < self.theta <= grid.ell:
            raise ConfigError(f"theta must lie in (0, ell], got {self.theta}")
        if not self.phi_unit > 0:
            raise ConfigError("phi_unit must be positive")
        lam = self.lam(grid)
        if lam > 1:
            raise ConfigError(
                f"lambda = beta_c*2d*tau/chi^2 = {lam:.4g} exceeds 1; "
                f"tau must be <= {grid.chi**2 / (2 * grid.dim * self.beta_c):.4g}")
        for v in self.vessels:
            if len(v) != grid.dim:
                raise ConfigError(f"vessel {v} does not have {grid.dim} coordinates")
            if any(not 0 <= x <= grid.ell for x in v):
                raise ConfigError(f"vessel {v} lies outside the domain")
        from .chemo import stability_limit

        tmax = stability_limit(self, grid)
        if self.tau > tmax:
            raise ConfigError(
                f"tau = {self.tau:g} violates the chemoattractant stability limit "
                f"tau <= chi^2/(2*dim*beta_phi) = {tmax:.4e}")

    def as_array(self) -> np.ndarray:
        """Packed rates for the kernels (order fixed by ``_PACK``)."""
        return np.array([getattr(self, k) for k in _PACK], dtype=np.float64)


_PACK = ("alpha_n", "mu_n", "zeta_n", "alpha_c", "mu_c", "beta_c", "gamma_c",
         "beta_phi", "alpha_phi", "kappa_phi", "w_max", "tau", "phi_unit")


@njit(cache=True)
def psi_scalar(w, w_max):
    if w >= w_max:
        return 0.0
    return 1.0 - w / w_max


def psi(w, w_max: float):
    """Volume-filling factor ``max(0, 1 - w/w_max)``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("psi is undefined for negative density")
    if not w_max > 0:
        raise ValueError("w_max must be positive")
    out = np.clip(1.0 - w / w_max, 0.0, 1.0)
    return out if out.ndim else float(out)


def total_mass(f: np.ndarray, grid: Grid) -> float:
    return float(np.sum(f) * grid.cell_volume)


def disc_halfwidths(theta: float, grid: Grid) -> np.ndarray:
    """Half-width along axis 1 for each row offset ``-r..r`` of the kill disc.

    Sites at distance exactly ``theta`` are included.
    """
    if not theta > 0:
        raise ConfigError(f"theta must be positive, got {theta}")
    rr = (theta / grid.chi) ** 2 * (1 + 1e-12)
    r = int(math.floor(math.sqrt(rr)))
    if grid.dim == 1:
        return np.zeros(2 * r + 1, dtype=np.int64)
    return np.array([int(math.floor(math.sqrt(rr - a * a))) for a in range(-r, r + 1)],
                    dtype=np.int64)


@njit(cache=True)
def kill_kernel(c, halfw, vol, K, B):
    """K[i,j] = vol * sum of c over the disc described by ``halfw``; row box sums."""
    P, Q = c.shape
    r = (halfw.shape[0] - 1) // 2
    for i in range(P):
        for j in range(Q):
            K[i, j] = 0.0
    for aa in range(-r, r + 1):
        h = halfw[aa + r]
        lo = max(0, -aa)
        hi = min(P, P - aa)
        if lo >= hi:
            continue
        for i in range(lo + aa, hi + aa):
            acc = 0.0
            for j in range(min(h, Q)):
                acc += c[i, j]
            for j in range(Q):
                if j + h < Q:
                    acc += c[i, j + h]
                B[i, j] = acc
                if j - h >= 0:
                    acc -= c[i, j - h]
        for i in range(lo, hi):
            for j in range(Q):
                K[i, j] += B[i + aa, j] * vol


def kill_field(c: np.ndarray, theta: float, grid: Grid) -> np.ndarray:
    """Number of T cells within distance ``theta`` of every site."""
    if not theta > 0:
        raise ConfigError(f"theta must be positive, got {theta}")
    c2 = np.ascontiguousarray(grid.as2d(np.asarray(c, dtype=np.float64)))
    K = np.empty_like(c2)
    kill_kernel(c2, disc_halfwidths(theta, grid), grid.cell_volume, K, np.empty_like(c2))
    return K.reshape(grid.shape)


def phi_max(phi0: np.ndarray, A: float, w_max: float) -> float:
    v = max(float(np.max(phi0)) if np.size(phi0) else 0.0, A * w_max)
    if not v > 0:
        raise ConfigError("phi_max must be positive")
    return v


def vessel_weights(vessels, grid: Grid) -> np.ndarray:
    """Multilinear interpolation weights of each vessel point on its enclosing sites.

    Returns shape ``(len(vessels), P, Q)``; each slice sums to one.
    """
    P = grid.P
    Q = P if grid.dim == 2 else 1
    W = np.zeros((len(vessels), P, Q))
    for v, pt in enumerate(vessels):
        parts = []
        for x in pt:
            f = x / grid.chi
            i0 = min(int(math.floor(f)), P - 2)
            d = f - i0
            parts.append(((i0, 1.0 - d), (i0 + 1, d)))
        if grid.dim == 1:
            for i, wi in parts[0]:
                W[v, i, 0] += wi
        else:
            for i, wi in parts[0]:
                for j, wj in parts[1]:
                    W[v, i, j] += wi * wj
    return W
