"""Hybrid (3-replicate mean) versus continuum trajectories on the baseline and the four squares."""
import argparse

import numpy as np

from tumour_immune import harness
from tumour_immune.record import RunRecord


def deviation(cont: RunRecord, hyb: RunRecord, key: str, floor: float = 100.0):
    L = min(len(cont.t), len(hyb.t))
    c, h = cont[key][:L], hyb[key][:L]
    mask = c > floor
    if not mask.any():
        return 0.0, float("nan")
    rel = np.abs(h[mask] - c[mask]) / c[mask]
    i = int(np.argmax(rel))
    return float(rel[i]), float(cont.t[:L][mask][i])


def scenarios():
    yield "baseline", harness.baseline_config()
    for k in (1, 2, 3, 4):
        yield f"square{k}", harness.square_config(k)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicates", type=int, default=3)
    ap.add_argument("--cache", default=".cache")
    args = ap.parse_args()
    for name, cfg in scenarios():
        cont = harness.cached(cfg, "continuum", cache_dir=args.cache)
        hyb = RunRecord.aggregate([harness.cached(cfg, "hybrid", cfg.seed + r, cache_dir=args.cache)
                                   for r in range(args.replicates)])
        out = [name]
        for key in ("rho_n", "rho_c"):
            d, t = deviation(cont, hyb, key)
            out.append(f"{key}: max rel dev {d:.3f} at t={t:.2f}")
        out.append(f"final rho_n cont={cont.final('rho_n'):.4g} hyb={hyb.final('rho_n'):.4g}")
        print(" | ".join(out), flush=True)


if __name__ == "__main__":
    main()
