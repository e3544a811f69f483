import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumour_immune import harness
from tumour_immune.grid import ConfigError, Grid
from tumour_immune.immunoscore import (COLD, EXCLUDED, HOT, SUPPRESSED, Thresholds, build_regions,
                                       calibrate_thresholds, centre_of_mass, classify, immunoscore,
                                       region_counts)

G = Grid(2, 61, 1.0)
REG = build_regions((0.5, 0.5), 0.144, G)
TH = Thresholds(100.0, 1000.0)


def test_centre_of_mass_examples():
    N, _, _ = harness.initial_fields(harness.baseline_config())
    assert centre_of_mass(N.astype(float), G) == pytest.approx((0.5, 0.5), abs=1e-12)
    n = np.zeros(G.shape)
    n[12, 40] = 3.0
    x, y = G.coords()
    assert centre_of_mass(n, G) == pytest.approx((x[12, 40], y[12, 40]))
    g1 = Grid(1, 11, 1.0)
    u = np.zeros(g1.shape)
    u[2] = u[8] = 1.0
    assert centre_of_mass(u, g1) == pytest.approx((0.5,))
    with pytest.raises(ValueError):
        centre_of_mass(np.zeros(G.shape), G)


def test_region_masks_partition_tumour_disc():
    assert not np.any(REG.centre & REG.margin)
    np.testing.assert_array_equal(REG.centre | REG.margin, REG.tumour)


def test_centre_fraction_near_65_percent():
    assert REG.w_centre == pytest.approx(0.65, abs=0.03)
    assert REG.w_centre + REG.w_margin == pytest.approx(1.0)


def test_region_measure_matches_brute_force():
    count = 0
    for i in range(G.P):
        for j in range(G.P):
            if math.hypot(i * G.chi - 0.5, j * G.chi - 0.5) < 0.144:
                count += 1
    assert REG.area_centre == pytest.approx(count * G.chi**2)


def test_oversized_disc_warns():
    with pytest.warns(UserWarning):
        build_regions((0.5, 0.5), 2.0, G)
    with pytest.raises(ConfigError):
        build_regions((0.5, 0.5), 0.0, G)


def test_immunoscore_examples():
    assert immunoscore(np.zeros(G.shape), REG) == 0
    c = np.where(REG.centre, 7.0, 0.0)
    rho_c = c.sum() * G.cell_volume
    assert immunoscore(c, REG) == pytest.approx(REG.w_centre * rho_c)
    u = np.where(REG.tumour, 2.0, 0.0)
    expect = REG.w_centre * 2.0 * REG.area_centre + REG.w_margin * 2.0 * REG.area_margin
    assert immunoscore(u, REG) == pytest.approx(expect)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_immunoscore_linear(seed, s):
    c = np.random.default_rng(seed).random(G.shape)
    assert immunoscore(s * c, REG) == pytest.approx(s * immunoscore(c, REG), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_immunoscore_depends_only_on_region_mass(seed):
    rng = np.random.default_rng(seed)
    c = rng.random(G.shape)
    d = c.copy()
    for mask in (REG.centre, REG.margin, ~REG.tumour):
        d[mask] = rng.permutation(c[mask])
    assert immunoscore(d, REG) == pytest.approx(immunoscore(c, REG), rel=1e-12)


def test_classify_examples():
    assert classify(0.0, 0.0, 0.0, TH).label == COLD
    assert classify(5000.0, 10.0, 10.0, TH).label == HOT
    assert classify(500.0, 400.0, 0.0, TH).label == SUPPRESSED
    assert classify(500.0, 100.0, 300.0, TH).label == EXCLUDED


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0.1, 100))
def test_classify_scale_invariant(I, ic, im, s):
    th = Thresholds(100.0, 1000.0, eps=0.0)
    a = classify(I, ic + 1, im, th).label
    b = classify(s * I, s * (ic + 1), s * im, Thresholds(s * 100.0, s * 1000.0, eps=0.0)).label
    assert a == b


def test_malformed_thresholds():
    for lo, hi in ((0.0, 1.0), (5.0, 5.0), (10.0, 1.0)):
        with pytest.raises(ConfigError):
            Thresholds(lo, hi)


def test_calibrate_thresholds_percentiles():
    th = calibrate_thresholds(np.arange(101.0) + 1)
    assert th.low == pytest.approx(34.0)
    assert th.high == pytest.approx(67.0)
    with pytest.raises(ValueError):
        calibrate_thresholds([1.0, float("nan")])


def test_region_counts():
    c = np.where(REG.margin, 3.0, 0.0)
    ic, im = region_counts(c, REG)
    assert ic == 0
    assert im == pytest.approx(3.0 * REG.area_margin)
