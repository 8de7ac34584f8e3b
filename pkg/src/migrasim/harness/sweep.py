"""Parameter sweeps over a scenario template."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from ..config import ScenarioConfig, serialize_config
from ..metrics import CostWeights, delta_lcr, modeled_tec
from ..runner import run_scenario
from .stats import mean_ci

SWEEP_AXES = ("mf", "speed", "range", "lps", "pi", "interaction_size", "migration_size")


class SweepError(ValueError):
    pass


@dataclass
class SweepSpec:
    template: ScenarioConfig
    axes: dict = field(default_factory=dict)
    cap: int = 256
    baseline: bool = False
    weights: CostWeights = field(default_factory=CostWeights)

    def points(self) -> list[ScenarioConfig]:
        for name in self.axes:
            if name not in SWEEP_AXES:
                raise SweepError(f"cannot sweep over {name!r}")
        names = sorted(self.axes)
        size = 1
        for n in names:
            size *= len(self.axes[n])
        if size > self.cap:
            raise SweepError(f"sweep has {size} grid points, cap is {self.cap}")
        return [
            replace(self.template, **dict(zip(names, combo)))
            for combo in itertools.product(*(self.axes[n] for n in names))
        ]


def run_point(cfg: ScenarioConfig, weights: CostWeights = CostWeights()) -> dict:
    """Mean metrics of one grid point over ``cfg.runs`` seeds (seed + run index)."""
    reports = [run_scenario(replace(cfg, seed=cfg.seed + i, runs=1)) for i in range(cfg.runs)]
    lcrs = [r.lcr for r in reports]
    mrs = [r.mr for r in reports]
    tecs = [modeled_tec(r.total, weights) for r in reports]
    lcr_m, lcr_h = mean_ci(lcrs)
    mr_m, mr_h = mean_ci(mrs)
    tec_m, tec_h = mean_ci(tecs)
    return {
        "config": cfg,
        "lcr": lcr_m,
        "lcr_ci": lcr_h,
        "mr": mr_m,
        "mr_ci": mr_h,
        "tec": tec_m,
        "tec_ci": tec_h,
        "migrations": sum(r.migrations for r in reports) / len(reports),
        "lcr_runs": lcrs,
        "reports": reports,
    }


def run_sweep(spec: SweepSpec, keep_reports: bool = False) -> list[dict]:
    """One summary row per grid point; with ``baseline`` each point also gets a GAIA-off
    run set and its delta LCR."""
    rows = []
    baselines = {}
    for cfg in spec.points():
        row = run_point(cfg, spec.weights)
        if spec.baseline and cfg.gaia:
            key = serialize_config(replace(cfg, gaia=False, mf=0.0, heuristic=1))
            if key not in baselines:
                baselines[key] = run_point(replace(cfg, gaia=False), spec.weights)
            base = baselines[key]
            row["baseline_lcr"] = base["lcr"]
            row["baseline_tec"] = base["tec"]
            row["delta_lcr"] = delta_lcr(row["lcr_runs"], base["lcr_runs"])
        if not keep_reports:
            row.pop("reports")
        rows.append(row)
    return rows


def best_mf(rows: list[dict]) -> tuple[float, float]:
    """(mf, modeled cost) of the grid point with the lowest modeled cost."""
    if not rows:
        raise SweepError("empty sweep")
    best = min(rows, key=lambda r: (r["tec"], r["config"].mf))
    return best["config"].mf, best["tec"]
