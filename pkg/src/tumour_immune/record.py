from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SERIES = ("rho_n", "rho_c", "phi_tot", "immunoscore", "centre_count", "margin_count")


@dataclass
class RunRecord:
    """Time series of global observables plus optional snapshots.

    ``variance`` is filled only for replicate aggregates (sample variance,
    ``ddof=1``; zeros when a single replicate is present).
    """

    t: np.ndarray
    series: dict
    snapshots: dict = field(default_factory=dict)
    variance: dict | None = None
    replicates: int = 1
    seeds: tuple = ()

    @classmethod
    def from_rows(cls, rows: np.ndarray, snapshots=None, seeds=()) -> "RunRecord":
        series = {k: rows[:, i + 1].copy() for i, k in enumerate(SERIES)}
        return cls(t=rows[:, 0].copy(), series=series, snapshots=snapshots or {}, seeds=tuple(seeds))

    def __getitem__(self, key):
        return self.series[key]

    def final(self, key: str) -> float:
        return float(self.series[key][-1])

    @classmethod
    def aggregate(cls, records: list) -> "RunRecord":
        if not records:
            raise ValueError("no completed replicates to aggregate")
        L = min(len(r.t) for r in records)
        t = records[0].t[:L]
        mean, var = {}, {}
        for k in SERIES:
            stack = np.stack([r.series[k][:L] for r in records])
            mean[k] = stack.mean(axis=0)
            var[k] = stack.var(axis=0, ddof=1) if len(records) > 1 else np.zeros(L)
        seeds = tuple(s for r in records for s in r.seeds)
        return cls(t=t, series=mean, snapshots=records[0].snapshots, variance=var,
                   replicates=len(records), seeds=seeds)
