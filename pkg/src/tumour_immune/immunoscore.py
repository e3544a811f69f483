from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import ConfigError, Grid

COLD = "cold"
EXCLUDED = "altered-excluded"
SUPPRESSED = "altered-immunosuppressed"
HOT = "hot"
CENTRE_FRACTION = 0.65


@dataclass(frozen=True)
class RegionSpec:
    centre: np.ndarray
    margin: np.ndarray
    tumour: np.ndarray
    R: float
    x_cm: tuple
    cell_volume: float

    @property
    def area_centre(self) -> float:
        return float(self.centre.sum()) * self.cell_volume

    @property
    def area_margin(self) -> float:
        return float(self.margin.sum()) * self.cell_volume

    @property
    def area_tumour(self) -> float:
        return float(self.tumour.sum()) * self.cell_volume

    @property
    def w_centre(self) -> float:
        a = self.area_tumour
        return self.area_centre / a if a > 0 else 0.0

    @property
    def w_margin(self) -> float:
        a = self.area_tumour
        return self.area_margin / a if a > 0 else 0.0


@dataclass(frozen=True)
class Thresholds:
    low: float
    high: float
    exclusion_ratio: float = 1.0
    eps: float = 1.0

    def __post_init__(self):
        if not (0 < self.low < self.high) or not self.exclusion_ratio > 0 or self.eps < 0:
            raise ConfigError(f"malformed thresholds {self}")


@dataclass(frozen=True)
class Classification:
    label: str
    I_f: float
    centre_count: float
    margin_count: float


def centre_of_mass(n0: np.ndarray, grid: Grid) -> tuple:
    m = float(n0.sum())
    if not m > 0:
        raise ValueError("centre of mass undefined for zero tumour mass")
    return tuple(float((n0 * x).sum() / m) for x in grid.coords())


def build_regions(x_cm, R: float, grid: Grid) -> RegionSpec:
    """Centre disc of radius R; tumour disc of radius R/sqrt(0.65); margin is their difference."""
    if not R > 0:
        raise ConfigError("R must be positive")
    coords = grid.coords()
    d2 = sum((x - x0) ** 2 for x, x0 in zip(coords, x_cm))
    R_tum = R / math.sqrt(CENTRE_FRACTION)
    lo = [x0 - R_tum for x0 in x_cm]
    hi = [x0 + R_tum for x0 in x_cm]
    if min(lo) < 0 or max(hi) > grid.ell:
        warnings.warn("tumour region extends beyond the domain and is clipped", stacklevel=2)
    centre = d2 < R * R
    tumour = d2 < R_tum * R_tum
    margin = tumour & ~centre
    if not margin.any():
        warnings.warn("margin region is empty", stacklevel=2)
    return RegionSpec(centre, margin, tumour, R, tuple(x_cm), grid.cell_volume)


def region_counts(c: np.ndarray, regions: RegionSpec) -> tuple:
    v = regions.cell_volume
    return float(c[regions.centre].sum() * v), float(c[regions.margin].sum() * v)


def immunoscore(c: np.ndarray, regions: RegionSpec) -> float:
    ic, im = region_counts(c, regions)
    return regions.w_centre * ic + regions.w_margin * im


def classify(I_f: float, centre_count: float, margin_count: float, th: Thresholds) -> Classification:
    if I_f < th.low:
        label = COLD
    elif I_f > th.high:
        label = HOT
    elif margin_count / (centre_count + th.eps) > th.exclusion_ratio:
        label = EXCLUDED
    else:
        label = SUPPRESSED
    return Classification(label, float(I_f), float(centre_count), float(margin_count))


def calibrate_thresholds(I_values, exclusion_ratio: float = 1.0, q=(33.0, 66.0)) -> Thresholds:
    """Low/high thresholds at the given percentiles of a sweep's final immunoscores."""
    I = np.asarray([v for v in I_values if np.isfinite(v)], dtype=float)
    if I.size < 2:
        raise ValueError("need at least two finite immunoscores")
    lo, hi = np.percentile(I, q)
    return Thresholds(float(lo), float(hi), exclusion_ratio)
