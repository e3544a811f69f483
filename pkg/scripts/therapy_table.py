"""rho_n(10) for every therapy preset on the four square configurations (continuum)."""
import argparse

from tumour_immune import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--engine", choices=("continuum", "hybrid"), default="continuum")
    args = ap.parse_args()
    print("square," + ",".join(harness.PRESETS))
    for k in sorted(harness.SQUARES):
        row = []
        for preset in harness.PRESETS:
            cfg = harness.apply_therapy(harness.square_config(k), preset)
            row.append(harness.cached(cfg, args.engine).final("rho_n"))
        print(f"{k}," + ",".join(f"{v:.6g}" for v in row), flush=True)


if __name__ == "__main__":
    main()
