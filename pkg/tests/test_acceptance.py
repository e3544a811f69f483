"""End-to-end acceptance checks at their stated tolerances.

Each test records a PASS/FAIL line (printed again in the terminal summary).
Long runs go through ``harness.cached`` so a rerun with unchanged sources is
fast; delete ``.cache/`` to force recomputation.

    python3 -m pytest tests/test_acceptance.py -v
"""
import sys
import time

import numpy as np
import pytest

from tumour_immune import cli, harness
from tumour_immune.chemo import chemo_step
from tumour_immune.continuum import ContinuumState, run_continuum
from tumour_immune.grid import Grid, ModelParams, total_mass
from tumour_immune.hybrid import AgentState, tcell_random_move
from tumour_immune.immunoscore import EXCLUDED, SUPPRESSED, build_regions, classify
from tumour_immune.record import RunRecord

pytestmark = pytest.mark.slow

RESULTS = {}
REPLICATES = 3


def report(n: int, title: str, ok: bool, detail: str):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    RESULTS[n] = line
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    assert ok, line


def scenarios():
    yield "baseline", harness.baseline_config()
    for k in (1, 2, 3, 4):
        yield f"square{k}", harness.square_config(k)


def hybrid_mean(cfg) -> RunRecord:
    return RunRecord.aggregate([harness.cached(cfg, "hybrid", cfg.seed + r) for r in range(REPLICATES)])


def test_1_baseline_eradication():
    cfg = harness.baseline_config()
    t0 = time.perf_counter()
    cont = harness.cached(cfg, "continuum", refresh=True)
    t_cont = time.perf_counter() - t0
    t0 = time.perf_counter()
    first = harness.cached(cfg, "hybrid", cfg.seed, refresh=True)
    t_hyb = time.perf_counter() - t0
    reps = [first] + [harness.cached(cfg, "hybrid", cfg.seed + r) for r in range(1, REPLICATES)]
    finals = [r.final("rho_n") for r in reps]
    ok = cont.final("rho_n") < 1 and all(f == 0 for f in finals) and t_cont < 300 and t_hyb < 1800
    report(1, "baseline eradication", ok,
           f"continuum rho_n(15)={cont.final('rho_n'):.3g} ({t_cont:.0f} s), "
           f"hybrid rho_n(15)={finals} ({t_hyb:.0f} s for one replicate)")


def test_2_hybrid_continuum_agreement():
    worst = []
    for name, cfg in scenarios():
        cont = harness.cached(cfg, "continuum")
        hyb = hybrid_mean(cfg)
        L = min(len(cont.t), len(hyb.t))
        for key in ("rho_n", "rho_c"):
            c, h = cont[key][:L], hyb[key][:L]
            mask = c > 100
            if not mask.any():
                continue
            rel = np.abs(h[mask] - c[mask]) / c[mask]
            i = int(np.argmax(rel))
            worst.append((float(rel[i]), name, key, float(cont.t[:L][mask][i])))
    worst.sort(reverse=True)
    over = [w for w in worst if w[0] > 0.10]
    detail = "; ".join(f"{n} {k} {d:.1%} at t={t:.2f}" for d, n, k, t in (over or worst[:1]))
    report(2, "hybrid-continuum agreement <= 10%", not over,
           ("exceeded: " if over else "max deviation ") + detail)


def test_3_immunoscore_ordering_and_labels():
    th = harness.baseline_config().thresholds
    I, lab = {}, {}
    for k in (1, 2, 3, 4):
        rec = harness.cached(harness.square_config(k), "continuum")
        I[k] = rec.final("immunoscore")
        lab[k] = classify(I[k], rec.final("centre_count"), rec.final("margin_count"), th).label
    ordered = I[1] < min(I[2], I[3]) < I[4]
    ok = ordered and lab[2] == EXCLUDED and lab[3] == SUPPRESSED
    report(3, "immunoscore ordering and labels", ok,
           ", ".join(f"sq{k} I_f={I[k]:.4g} ({lab[k]})" for k in I)
           + f"; thresholds {th.low:.4g}/{th.high:.4g}")


def test_4_chemo_oracle():
    g = Grid()
    p = ModelParams(zeta_n=0.0)
    phi = np.full(g.shape, 7.0)
    zero = np.zeros(g.shape)
    T = 1.0
    for _ in range(int(round(T / p.tau))):
        phi = chemo_step(phi, zero, p, g)
    exact = 7.0 * np.exp(-p.kappa_phi * T)
    decay_err = float(np.max(np.abs(phi - exact)) / exact)
    bound = 1.1 * p.kappa_phi * p.tau * T

    rng = np.random.default_rng(0)
    phi = rng.random(g.shape) * 1e3
    worst = 0.0
    for _ in range(2000):
        n = rng.random(g.shape) * 1e4
        new = chemo_step(phi, n, p, g)
        expect = (1 - p.tau * p.kappa_phi) * total_mass(phi, g) + p.tau * p.alpha_phi * p.phi_unit * total_mass(n, g)
        worst = max(worst, abs(total_mass(new, g) - expect) / expect)
        phi = new
    ok = decay_err < bound and worst < 1e-12
    report(4, "chemoattractant oracle", ok,
           f"decay rel err {decay_err:.3e} (bound {bound:.3e}), mass identity worst {worst:.2e} over 2000 steps")


def test_5_flux_conservation():
    g = Grid()
    # weak secretion keeps the evolving phi gradients inside the step-size guard
    p = ModelParams(zeta_n=0.004, alpha_c=0.0, mu_c=0.0, alpha_phi=0.0015, t_f=1.0)
    regions = build_regions((0.5, 0.5), 0.144, g)
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        s = ContinuumState(rng.random(g.shape) * 3e5, rng.random(g.shape) * 1e5, rng.random(g.shape) * 100)
        rec = run_continuum(p, g, s, regions, output_every=100)
        rho = rec["rho_c"]
        assert len(rho) == 101
        worst = max(worst, float(np.max(np.abs(rho - rho[0])) / rho[0]))
    report(5, "flux-scheme conservation", worst < 1e-10,
           f"max relative drift of total_mass(c) over 1e4 steps, 3 random fields: {worst:.2e}")


def test_6_therapy_trends():
    rho = {}
    for k in (1, 2, 3, 4):
        for preset in harness.PRESETS:
            cfg = harness.apply_therapy(harness.square_config(k), preset)
            rho[k, preset] = harness.cached(cfg, "continuum").final("rho_n")
    drop4 = 1 - rho[4, "anti_pd1"] / rho[4, "none"]
    change1 = abs(rho[1, "anti_pd1"] / rho[1, "none"] - 1)
    a = drop4 >= 0.20 and change1 < 0.05
    b = rho[4, "dual"] < rho[4, "anti_pd1"]
    c = all(rho[k, "chemo_anti_pd1"] < rho[k, "none"] for k in (1, 2, 3, 4))
    table = " ".join(f"sq{k}:" + "/".join(f"{rho[k, q]:.4g}" for q in harness.PRESETS) for k in (1, 2, 3, 4))
    report(6, "therapy trends", a and b and c,
           f"(a) hot drop {drop4:.1%}, cold change {change1:.1%}; (b) {b}; (c) {c}; "
           f"rho_n(10) none/anti/dual/chemo {table}")


def test_7_random_walk_oracle():
    g = Grid(1, 9, 1.0)
    lam = 0.5
    p = ModelParams(zeta_n=0.0, w_max=1e300, gamma_c=0.0, tau=1e-4, beta_c=lam * g.chi**2 / (2 * 1e-4))
    assert p.lam(g) == pytest.approx(lam)
    start, steps, R = 2, 20, 100_000

    Tm = np.zeros((9, 9))
    for i in range(9):
        for j in (i - 1, i + 1):
            if 0 <= j < 9:
                Tm[i, j] = lam / 2
        Tm[i, i] = 1 - Tm[i].sum()
    exact = np.linalg.matrix_power(Tm, steps)[start]

    rng = np.random.default_rng(2024)
    counts = np.zeros(9)
    zero = np.zeros(9, dtype=np.int64)
    for _ in range(R):
        c = np.zeros(9, dtype=np.int64)
        c[start] = 1
        s = AgentState(zero, c)
        for _ in range(steps):
            s = tcell_random_move(s, p, g, rng)
        counts += s.tcells
    tv = 0.5 * float(np.abs(counts / R - exact).sum())
    report(7, "random-walk oracle", tv < 0.01, f"TV distance {tv:.4f} over {R} replicates")


def test_8_determinism(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    harness.write_config(harness.baseline_config(t_f=0.5, snapshots=(0.25, 0.5)), cfg_path)
    for d in ("a", "b"):
        rc = cli.main(["run", "--config", str(cfg_path), "--engine", "both", "--seed", "17",
                       "--replicates", "2", "--out", str(tmp_path / d)])
        assert rc == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    report(8, "determinism", len(files) >= 10 and all(same),
           f"{sum(same)}/{len(files)} output files byte-identical")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
