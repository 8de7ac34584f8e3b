"""Command line entry point: run scenarios, write the CSV."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace

from ..config import ConfigError, ScenarioConfig, load_config
from ..core import SimulationError
from ..engine import RunReport
from ..runner import engine_config, run_scenario, run_tcp_lp
from .stats import format_ci, mean_ci

CSV_COLUMNS = [
    "run_id", "seed", "lps", "ses", "steps", "heuristic", "mf", "mt", "gaia", "speed", "range",
    "pi", "interaction_size", "migration_size", "lcr", "mr", "migrations", "lcc", "rcc",
    "mig_bytes", "heu_time_s", "mig_cpu_time_s", "barrier_wait_s", "wct_s",
]
TIMING_COLUMNS = ("heu_time_s", "mig_cpu_time_s", "barrier_wait_s", "wct_s")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="migrasim", description="Run migration/self-clustering simulation scenarios.")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int)
    p.add_argument("--lps", type=int)
    p.add_argument("--ses", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--heuristic", type=int, choices=(1, 2, 3))
    p.add_argument("--mf", type=float)
    p.add_argument("--mt", type=int)
    p.add_argument("--kappa", type=int)
    p.add_argument("--omega", type=int)
    p.add_argument("--zeta", type=int)
    p.add_argument("--gaia", type=_onoff, metavar="{on,off}")
    p.add_argument("--speed", type=float)
    p.add_argument("--range", type=float)
    p.add_argument("--side", type=float, help="area side (default: density matched)")
    p.add_argument("--pi", type=float)
    p.add_argument("--interaction-size", type=int)
    p.add_argument("--migration-size", type=int)
    p.add_argument("--transport", choices=("local", "tcp"))
    p.add_argument("--roster", metavar="PATH")
    p.add_argument("--lp-id", type=int, help="tcp: run only this LP of the roster")
    p.add_argument("--scheduler", choices=("sequential", "threads"))
    p.add_argument("--runs", type=int)
    p.add_argument("--out", metavar="PATH", help="CSV file (default: stdout)")
    p.add_argument("--no-payload-delivery", action="store_true")
    p.add_argument("--balancer", type=_onoff, metavar="{on,off}")
    p.add_argument("--band", type=int)
    p.add_argument("--trace-digest", action="store_true", help="print each run's trace digest")
    return p


def scenario_from_args(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {
        k: getattr(args, k)
        for k in (
            "seed", "lps", "ses", "steps", "heuristic", "mf", "mt", "kappa", "omega", "zeta",
            "gaia", "speed", "range", "side", "pi", "interaction_size", "migration_size",
            "transport", "roster", "scheduler", "runs", "balancer", "band",
        )
        if getattr(args, k) is not None
    }
    if args.no_payload_delivery:
        overrides["payload_delivery"] = False
    return replace(cfg, **overrides).validate()


def csv_row(run_id, cfg: ScenarioConfig, report: RunReport) -> dict:
    tot = report.total
    return {
        "run_id": run_id,
        "seed": cfg.seed,
        "lps": cfg.lps,
        "ses": cfg.ses,
        "steps": cfg.steps,
        "heuristic": cfg.heuristic,
        "mf": cfg.mf,
        "mt": cfg.mt,
        "gaia": "on" if cfg.gaia else "off",
        "speed": cfg.speed,
        "range": cfg.range,
        "pi": cfg.pi,
        "interaction_size": cfg.interaction_size,
        "migration_size": cfg.migration_size,
        "lcr": repr(report.lcr),
        "mr": repr(report.mr),
        "migrations": tot.mig_count,
        "lcc": tot.lcc_count,
        "rcc": tot.rcc_count,
        "mig_bytes": tot.mig_bytes,
        "heu_time_s": f"{tot.heu_time:.6f}",
        "mig_cpu_time_s": f"{tot.mig_cpu_time:.6f}",
        "barrier_wait_s": f"{tot.barrier_wait:.6f}",
        "wct_s": f"{report.wct_seconds:.6f}",
    }


def summary_row(cfg: ScenarioConfig, rows: list[dict]) -> dict:
    out = dict(rows[0])
    out["run_id"] = "summary"
    for col in ("migrations", "lcc", "rcc", "mig_bytes", "heu_time_s", "mig_cpu_time_s", "barrier_wait_s"):
        out[col] = repr(sum(float(r[col]) for r in rows) / len(rows))
    for col in ("lcr", "mr", "wct_s"):
        out[col] = format_ci(*mean_ci([float(r[col]) for r in rows]))
    return out


def run_scenarios(cfg: ScenarioConfig, on_digest=None) -> list[dict]:
    rows = []
    for i in range(cfg.runs):
        run_cfg = replace(cfg, seed=cfg.seed + i, runs=1)
        report = run_scenario(run_cfg)
        if on_digest is not None:
            on_digest(i, run_cfg.seed, report.digest)
        rows.append(csv_row(i, run_cfg, report))
    if cfg.runs > 1:
        rows.append(summary_row(cfg, rows))
    return rows


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".migrasim-", suffix=".csv")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = scenario_from_args(args)
        if args.lp_id is not None and cfg.transport != "tcp":
            raise ConfigError("--lp-id requires --transport tcp")
        if args.lp_id is not None and not 0 <= args.lp_id < cfg.lps:
            raise ConfigError(f"--lp-id must be in [0, {cfg.lps})")
    except ConfigError as exc:
        print(f"migrasim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.lp_id is not None:
            res = run_tcp_lp(cfg, engine_config(cfg), args.lp_id)
            print(json.dumps({"lp_id": res.lp_id, **res.ledger.as_dict()}))
            return EXIT_OK
        digest = None
        if args.trace_digest:
            digest = lambda i, seed, d: print(f"run {i} seed {seed} digest {d:016x}")
        text = render_csv(run_scenarios(cfg, digest))
    except (SimulationError, OSError, ValueError) as exc:
        print(f"migrasim: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())
