"""Baseline scenario on both engines; writes series and snapshots under --out."""
import argparse
from dataclasses import replace
from pathlib import Path

from tumour_immune import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("out/baseline"))
    ap.add_argument("--replicates", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = replace(harness.baseline_config(snapshots=(0.0, 2.0, 5.0, 15.0)),
                  engine="both", replicates=args.replicates)
    results = harness.run_engines(cfg, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    harness.write_config(cfg, args.out / "config.yaml")
    for engine, rec in results.items():
        harness.write_outputs(rec, args.out / engine)
        print(f"{engine}: rho_n(15) = {rec.final('rho_n'):.4g}, rho_c(15) = {rec.final('rho_c'):.4g}")


if __name__ == "__main__":
    main()
