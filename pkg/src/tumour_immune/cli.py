"""Command-line entry points: run, sweep, therapy.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .grid import ConfigError, NumericalError, StepSizeError


def _floats(s: str) -> list:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {s!r}") from e


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tumour-immune")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--engine", choices=harness.ENGINES)
        p.add_argument("--seed", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--snapshots", type=_floats)
        p.add_argument("--workers", type=int, default=1)

    common(sub.add_parser("run", help="single scenario"))
    sw = sub.add_parser("sweep", help="(alpha_phi, w_max) grid")
    common(sw)
    sw.add_argument("--alpha-phi", type=_floats, default=list(harness.SWEEP_ALPHA_PHI))
    sw.add_argument("--w-max", type=_floats, default=list(harness.SWEEP_W_MAX))
    th = sub.add_parser("therapy", help="scenario with a therapy preset")
    common(th)
    th.add_argument("--preset", choices=harness.PRESETS, required=True)
    return ap


def _configure(args) -> harness.ScenarioConfig:
    cfg = harness.load_config(args.config)
    kw = {}
    if args.engine:
        kw["engine"] = args.engine
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.replicates is not None:
        kw["replicates"] = args.replicates
    if args.snapshots is not None:
        kw["snapshots"] = tuple(args.snapshots)
    cfg = replace(cfg, **kw).validate()
    if args.cmd == "therapy":
        cfg = harness.apply_therapy(cfg, args.preset)
    return cfg


def _write_runs(cfg, out: Path, workers: int):
    results = harness.run_engines(cfg, workers=workers)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_config(cfg, out / "config.yaml")
    for engine, rec in results.items():
        d = out / engine if len(results) > 1 else out
        harness.write_outputs(rec, d)
        c = harness.classify(rec.final("immunoscore"), rec.final("centre_count"),
                             rec.final("margin_count"), cfg.thresholds)
        print(f"{engine}: rho_n(t_f)={rec.final('rho_n'):.6g} rho_c(t_f)={rec.final('rho_c'):.6g} "
              f"I_f={c.I_f:.6g} label={c.label}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _configure(args)
        if args.cmd == "sweep":
            engine = "continuum" if cfg.engine == "both" else cfg.engine
            res = harness.run_sweep(cfg, args.alpha_phi, args.w_max, engine=engine, workers=args.workers)
            args.out.mkdir(parents=True, exist_ok=True)
            harness.write_config(cfg, args.out / "config.yaml")
            harness.write_sweep(res, args.out)
            failed = sum(1 for c in res.cells if c.error)
            print(f"{len(res.cells)} cells, {failed} failed -> {args.out}")
        else:
            _write_runs(cfg, args.out, args.workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (StepSizeError, NumericalError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
