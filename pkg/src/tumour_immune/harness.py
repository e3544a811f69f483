"""Scenario configuration, initial conditions, replicates, sweeps and file outputs."""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import continuum, hybrid
from .grid import ConfigError, Grid, ModelParams
from .immunoscore import (Thresholds, build_regions, calibrate_thresholds, centre_of_mass,
                          classify)
from .record import RunRecord

ENGINES = ("hybrid", "continuum", "both")
PRESETS = ("none", "anti_pd1", "dual", "chemo_anti_pd1")
THERAPY_T_F = 10.0

# Percentiles 33/66 of final immunoscores over the default continuum sweep
# (scripts/calibrate_thresholds.py regenerates them).
DEFAULT_T_LOW = 2948.1
DEFAULT_T_HIGH = 7962.34
DEFAULT_EXCLUSION_RATIO = 1.0

SWEEP_ALPHA_PHI = tuple(float(v) for v in np.logspace(math.log10(0.0015), math.log10(1.5), 10))
SWEEP_W_MAX = tuple(float(v) for v in np.linspace(0.74e5, 8.88e5, 10))

SQUARES = {
    1: dict(alpha_phi=0.0015, w_max=2.96e5),
    2: dict(alpha_phi=0.15, w_max=2.22e5),
    3: dict(alpha_phi=0.15, w_max=8.88e5),
    4: dict(alpha_phi=1.5, w_max=8.88e5),
}
BASELINE = dict(zeta_n=0.004, alpha_phi=1.5, w_max=2.96e5)
SQUARE_ZETA = 1.2e-4


@dataclass(frozen=True)
class InitialSpec:
    tumour_amplitude: float = 800.0
    tumour_width: float = 200.0
    tumour_centre: tuple = (0.5, 0.5)
    tcell_amplitude: float = 60.0
    tcell_width: float = 300.0
    phi_amplitude: float = 90.0
    phi_width: float = 200.0


@dataclass(frozen=True)
class ScenarioConfig:
    params: ModelParams
    grid: Grid = field(default_factory=Grid)
    init: InitialSpec = field(default_factory=InitialSpec)
    engine: str = "continuum"
    R: float = 0.144
    replicates: int = 1
    seed: int = 0
    output_every: int = 100
    snapshots: tuple = ()
    threshold_low: float = DEFAULT_T_LOW
    threshold_high: float = DEFAULT_T_HIGH
    exclusion_ratio: float = DEFAULT_EXCLUSION_RATIO
    therapy: str = "none"
    early_stop: bool = False

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.threshold_low, self.threshold_high, self.exclusion_ratio)

    def with_params(self, **kw) -> "ScenarioConfig":
        return replace(self, params=replace(self.params, **kw))

    def validate(self) -> "ScenarioConfig":
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.therapy not in PRESETS:
            raise ConfigError(f"unknown therapy preset {self.therapy!r}")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ConfigError("replicates must be a positive integer")
        if int(self.output_every) != self.output_every or self.output_every < 1:
            raise ConfigError("output_every must be a positive integer")
        if not self.R > 0:
            raise ConfigError("R must be positive")
        if len(self.init.tumour_centre) != self.grid.dim:
            raise ConfigError("tumour_centre must have one coordinate per dimension")
        self.params.validate(self.grid)
        self.thresholds
        return self


def default_config(zeta_n: float, **overrides) -> ScenarioConfig:
    """Default parameter set with the given kill efficiency; overrides may name any parameter or config key."""
    pkeys = set(ModelParams.names())
    p = {k: v for k, v in overrides.items() if k in pkeys}
    c = {k: v for k, v in overrides.items() if k not in pkeys}
    return ScenarioConfig(params=ModelParams(zeta_n=zeta_n, **p), **c).validate()


def baseline_config(**kw) -> ScenarioConfig:
    d = dict(BASELINE)
    d.update(kw)
    return default_config(**d)


def square_config(k: int, **kw) -> ScenarioConfig:
    d = dict(SQUARES[k], zeta_n=SQUARE_ZETA)
    d.update(kw)
    return default_config(**d)


# ---- config files -------------------------------------------------------

_GRID_KEYS = ("dim", "P", "ell")
_INIT_KEYS = tuple(f.name for f in fields(InitialSpec))
_TOP_KEYS = tuple(f.name for f in fields(ScenarioConfig) if f.name not in ("params", "grid", "init"))


def _flatten(cfg: ScenarioConfig) -> dict:
    out = {}
    for k in _TOP_KEYS:
        v = getattr(cfg, k)
        out[k] = list(v) if isinstance(v, tuple) else v
    for k in _GRID_KEYS:
        out[k] = getattr(cfg.grid, k)
    for k in _INIT_KEYS:
        v = getattr(cfg.init, k)
        out[k] = list(v) if isinstance(v, tuple) else v
    for k in ModelParams.names():
        v = getattr(cfg.params, k)
        out[k] = [list(p) for p in v] if k == "vessels" else v
    return out


def config_from_dict(d: dict) -> ScenarioConfig:
    known = set(_TOP_KEYS) | set(_GRID_KEYS) | set(_INIT_KEYS) | set(ModelParams.names())
    for k in d:
        if k not in known:
            raise ConfigError(f"unknown key {k!r}")
    if d.get("zeta_n") is None:
        raise ConfigError("zeta_n has no default and must be given")
    try:
        grid = Grid(**{k: d[k] for k in _GRID_KEYS if k in d})
        init = {k: d[k] for k in _INIT_KEYS if k in d}
        if "tumour_centre" in init:
            init["tumour_centre"] = tuple(float(x) for x in init["tumour_centre"])
        pk = {k: d[k] for k in ModelParams.names() if k in d}
        if "vessels" in pk:
            pk["vessels"] = tuple(tuple(float(x) for x in v) for v in pk["vessels"])
        for k, v in pk.items():
            if k != "vessels" and isinstance(v, str):
                pk[k] = float(v)
        top = {k: d[k] for k in _TOP_KEYS if k in d}
        if "snapshots" in top:
            top["snapshots"] = tuple(float(t) for t in top["snapshots"] or ())
        cfg = ScenarioConfig(params=ModelParams(**pk), grid=grid, init=InitialSpec(**init), **top)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    return cfg.validate()


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        d = yaml.safe_load(path.read_text())
    except yaml.MarkedYAMLError as e:
        m = e.problem_mark
        raise ConfigError(f"{path}:{m.line + 1}:{m.column + 1}: {e.problem}") from e
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected key: value pairs at top level")
    return config_from_dict(d)


def write_config(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(_flatten(cfg), sort_keys=False))
    return path


def config_digest(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(yaml.safe_dump(_flatten(cfg), sort_keys=True).encode()).hexdigest()


# ---- initial state, therapy ----------------------------------------------

def _gauss(grid: Grid, centre, width: float) -> np.ndarray:
    return np.exp(-width * sum((x - x0) ** 2 for x, x0 in zip(grid.coords(), centre)))


def initial_fields(cfg: ScenarioConfig):
    """Rounded per-site tumour and T-cell counts, and the chemoattractant density."""
    g, s = cfg.grid, cfg.init
    N = np.rint(s.tumour_amplitude * _gauss(g, s.tumour_centre, s.tumour_width)).astype(np.int64)
    tc = sum(_gauss(g, v, s.tcell_width) for v in cfg.params.vessels)
    C = np.rint(s.tcell_amplitude * np.asarray(tc, dtype=float) * np.ones(g.shape)).astype(np.int64)
    phi = s.phi_amplitude * _gauss(g, s.tumour_centre, s.phi_width) * cfg.params.phi_unit / g.cell_volume
    return N, C, phi


def build_initial_state(cfg: ScenarioConfig, engine: str):
    N, C, phi = initial_fields(cfg)
    if engine == "hybrid":
        return hybrid.AgentState(N, C), phi
    if engine == "continuum":
        vol = cfg.grid.cell_volume
        return continuum.ContinuumState(N / vol, C / vol, phi.copy()), phi
    raise ConfigError(f"unknown engine {engine!r}")


def regions_for(cfg: ScenarioConfig):
    N, _, _ = initial_fields(cfg)
    return build_regions(centre_of_mass(N.astype(float), cfg.grid), cfg.R, cfg.grid)


def apply_therapy(cfg: ScenarioConfig, preset: str) -> ScenarioConfig:
    changes = {
        "none": dict(zeta_n=1.2e-4),
        "anti_pd1": dict(zeta_n=1e-3),
        "dual": dict(zeta_n=1e-3, alpha_c=12.0),
        "chemo_anti_pd1": dict(zeta_n=1e-3, alpha_c=12.0, alpha_n=0.75),
    }
    if preset not in changes:
        raise ConfigError(f"unknown therapy preset {preset!r}; choose from {PRESETS}")
    return replace(cfg.with_params(t_f=THERAPY_T_F, **changes[preset]), therapy=preset).validate()


# ---- running --------------------------------------------------------------

def run_single(cfg: ScenarioConfig, engine: str, seed: int | None = None) -> RunRecord:
    state, phi0 = build_initial_state(cfg, engine)
    regions = regions_for(cfg)
    kw = dict(output_every=cfg.output_every, snapshot_times=cfg.snapshots, early_stop=cfg.early_stop)
    if engine == "continuum":
        return continuum.run_continuum(cfg.params, cfg.grid, state, regions, **kw)
    return hybrid.run_hybrid(cfg.params, cfg.grid, state, phi0, regions,
                             seed=cfg.seed if seed is None else seed, **kw)


def _run_seed(args):
    cfg, seed = args
    return run_single(cfg, "hybrid", seed)


def run_replicates(cfg: ScenarioConfig, R: int | None = None, engine: str = "hybrid",
                   workers: int = 1) -> RunRecord:
    """Replicate r uses seed ``cfg.seed + r``; the continuum engine always runs once."""
    if engine == "continuum":
        rec = run_single(cfg, "continuum")
        return RunRecord.aggregate([rec])
    R = cfg.replicates if R is None else R
    if R < 1:
        raise ConfigError("replicate count must be >= 1")
    jobs = [(cfg, cfg.seed + r) for r in range(R)]
    recs = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for (c, s), fut in zip(jobs, [ex.submit(_run_seed, j) for j in jobs]):
                recs.append(_checked(fut.result, s))
    else:
        for c, s in jobs:
            recs.append(_checked(lambda: _run_seed((c, s)), s))
    return RunRecord.aggregate(recs)


def _checked(fn, seed):
    try:
        return fn()
    except (RuntimeError, ValueError) as e:
        raise type(e)(f"replicate with seed {seed} failed: {e}") from e


def run_engines(cfg: ScenarioConfig, workers: int = 1) -> dict:
    engines = ("continuum", "hybrid") if cfg.engine == "both" else (cfg.engine,)
    return {e: run_replicates(cfg, engine=e, workers=workers) for e in engines}


# ---- cache ----------------------------------------------------------------

def _digest_sources() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


# taken at import so cache keys describe the code actually loaded
_SOURCE_DIGEST = _digest_sources()


def cached(cfg: ScenarioConfig, engine: str, seed: int | None = None, cache_dir=None,
           refresh: bool = False) -> RunRecord:
    """run_single memoised on disk by config, engine, seed and package source.

    ``refresh`` recomputes and overwrites an existing entry.
    """
    cache_dir = Path(cache_dir or os.environ.get("TUMOUR_IMMUNE_CACHE", ".cache"))
    seed = cfg.seed if seed is None else seed
    key = hashlib.sha256(f"{config_digest(cfg)}|{engine}|{seed}|{_SOURCE_DIGEST}".encode()).hexdigest()[:24]
    path = cache_dir / f"{engine}_{key}.npz"
    if path.exists() and not refresh:
        z = np.load(path)
        rows = z["rows"]
        return RunRecord.from_rows(rows, seeds=(seed,) if engine == "hybrid" else ())
    rec = run_single(cfg, engine, seed)
    rows = np.column_stack([rec.t] + [rec.series[k] for k in rec.series])
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, rows=rows)
    os.replace(tmp, path)
    return rec


# ---- sweeps ---------------------------------------------------------------

@dataclass
class SweepCell:
    alpha_phi: float
    w_max: float
    I_f: float = float("nan")
    rho_n_final: float = float("nan")
    rho_c_final: float = float("nan")
    centre_count: float = float("nan")
    margin_count: float = float("nan")
    label: str = ""
    error: str = ""


@dataclass
class SweepResult:
    alpha_phi: tuple
    w_max: tuple
    cells: list

    def cell(self, alpha_phi, w_max) -> SweepCell:
        for c in self.cells:
            if c.alpha_phi == alpha_phi and c.w_max == w_max:
                return c
        raise KeyError((alpha_phi, w_max))

    def normalised(self) -> np.ndarray:
        I = np.array([c.I_f for c in self.cells], dtype=float)
        lo, hi = np.nanmin(I), np.nanmax(I)
        return (I - lo) / (hi - lo) if hi > lo else np.zeros_like(I)

    def relabel(self, th: Thresholds) -> "SweepResult":
        for c in self.cells:
            if not c.error:
                c.label = classify(c.I_f, c.centre_count, c.margin_count, th).label
        return self


def _sweep_cell(args):
    cfg, a, w, engine, use_cache = args
    cell = SweepCell(a, w)
    try:
        c = cfg.with_params(alpha_phi=a, w_max=w).validate()
        if engine == "continuum":
            recs = [cached(c, "continuum") if use_cache else run_single(c, "continuum")]
        else:
            recs = [cached(c, "hybrid", c.seed + r) if use_cache else run_single(c, "hybrid", c.seed + r)
                    for r in range(c.replicates)]
        rec = RunRecord.aggregate(recs)
        cell.I_f = rec.final("immunoscore")
        cell.rho_n_final = rec.final("rho_n")
        cell.rho_c_final = rec.final("rho_c")
        cell.centre_count = rec.final("centre_count")
        cell.margin_count = rec.final("margin_count")
        cell.label = classify(cell.I_f, cell.centre_count, cell.margin_count, cfg.thresholds).label
    except (RuntimeError, ValueError) as e:
        cell.error = f"{type(e).__name__}: {e}"
    return cell


def run_sweep(cfg: ScenarioConfig, alpha_phis=SWEEP_ALPHA_PHI, w_maxs=SWEEP_W_MAX,
              engine: str = "continuum", workers: int = 1, use_cache: bool = False) -> SweepResult:
    alpha_phis, w_maxs = tuple(alpha_phis), tuple(w_maxs)
    if not alpha_phis or not w_maxs:
        raise ConfigError("sweep lists must be nonempty")
    if engine not in ("continuum", "hybrid"):
        raise ConfigError("sweep engine must be continuum or hybrid")
    jobs = [(cfg, a, w, engine, use_cache) for a in alpha_phis for w in w_maxs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            cells = list(ex.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    return SweepResult(alpha_phis, w_maxs, cells)


def calibrate_from_sweep(sweep: SweepResult, exclusion_ratio: float = DEFAULT_EXCLUSION_RATIO) -> Thresholds:
    return calibrate_thresholds([c.I_f for c in sweep.cells if not c.error], exclusion_ratio)


# ---- outputs --------------------------------------------------------------

def _fmt(v) -> str:
    return f"{v:.9g}"


def write_series(rec: RunRecord, path) -> Path:
    path = Path(path)
    cols = ["rho_n", "rho_c", "phi_tot", "immunoscore"]
    header = ["t"] + cols
    if rec.variance is not None and rec.replicates > 1:
        header += [f"var_{k}" for k in cols]
    lines = [",".join(header)]
    for i, t in enumerate(rec.t):
        vals = [t] + [rec.series[k][i] for k in cols]
        if len(header) > 5:
            vals += [rec.variance[k][i] for k in cols]
        lines.append(",".join(_fmt(v) for v in vals))
    _write(path, "\n".join(lines) + "\n")
    return path


def write_snapshots(rec: RunRecord, directory) -> list:
    directory = Path(directory)
    out = []
    for (name, t), arr in sorted(rec.snapshots.items()):
        a = np.atleast_2d(arr)
        p = directory / f"{name}_{t:.3f}.csv"
        _write(p, "\n".join(",".join(_fmt(v) for v in row) for row in a) + "\n")
        out.append(p)
    return out


def write_sweep(sweep: SweepResult, directory) -> list:
    directory = Path(directory)
    norm = sweep.normalised()
    lines = ["alpha_phi,w_max,immunoscore_f,immunoscore_f_norm,rho_n_final,rho_c_final,label"]
    for c, z in zip(sweep.cells, norm):
        label = c.label if not c.error else "failed"
        lines.append(",".join([_fmt(c.alpha_phi), _fmt(c.w_max), _fmt(c.I_f), _fmt(z),
                               _fmt(c.rho_n_final), _fmt(c.rho_c_final), label]))
    paths = [directory / "sweep.csv"]
    _write(paths[0], "\n".join(lines) + "\n")
    for attr, name in (("I_f", "immunoscore_heatmap.csv"), ("rho_n_final", "rho_n_heatmap.csv")):
        rows = ["w_max\\alpha_phi," + ",".join(_fmt(a) for a in sweep.alpha_phi)]
        for w in sweep.w_max:
            rows.append(_fmt(w) + "," + ",".join(_fmt(getattr(sweep.cell(a, w), attr))
                                                  for a in sweep.alpha_phi))
        p = directory / name
        _write(p, "\n".join(rows) + "\n")
        paths.append(p)
    errors = [c for c in sweep.cells if c.error]
    if errors:
        p = directory / "sweep_errors.csv"
        _write(p, "alpha_phi,w_max,error\n" + "".join(
            f"{_fmt(c.alpha_phi)},{_fmt(c.w_max)},\"{c.error}\"\n" for c in errors))
        paths.append(p)
    return paths


def write_outputs(obj, directory) -> list:
    directory = Path(directory)
    if isinstance(obj, SweepResult):
        return write_sweep(obj, directory)
    return [write_series(obj, directory / "series.csv")] + write_snapshots(obj, directory)


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e

