"""Derive T_low/T_high from the default continuum (alpha_phi, w_max) sweep and label the four squares.

Cells are memoised in .cache/, so a rerun after an interruption resumes.
"""
import argparse
from pathlib import Path

from tumour_immune import harness
from tumour_immune.immunoscore import classify


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("out/sweep"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    base = harness.default_config(harness.SQUARE_ZETA)
    sweep = harness.run_sweep(base, engine="continuum", workers=args.workers, use_cache=True)
    th = harness.calibrate_from_sweep(sweep)
    sweep.relabel(th)
    harness.write_sweep(sweep, args.out)
    print(f"T_low = {th.low:.6g}  T_high = {th.high:.6g}  (exclusion ratio {th.exclusion_ratio:g})")
    for k in sorted(harness.SQUARES):
        rec = harness.cached(harness.square_config(k), "continuum")
        c = classify(rec.final("immunoscore"), rec.final("centre_count"), rec.final("margin_count"), th)
        print(f"square {k}: I_f = {c.I_f:.6g}  centre = {c.centre_count:.6g}  "
              f"margin = {c.margin_count:.6g}  -> {c.label}")


if __name__ == "__main__":
    main()
