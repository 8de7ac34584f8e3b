"""Turn a ScenarioConfig into an engine run on the chosen transport and scheduler."""

from __future__ import annotations

import multiprocessing as mp
import time
import traceback
from functools import partial

from .config import ScenarioConfig
from .core import SimulationError
from .engine import EngineConfig, LpResult, RunReport, assemble, run_lp_over, run_sequential, run_threaded
from .model import RwpBehavior, RwpWorld
from .transport.tcp import TcpTransport, load_roster


def engine_config(sc: ScenarioConfig, **extra) -> EngineConfig:
    return EngineConfig(
        num_entities=sc.ses,
        lps=sc.lps,
        steps=sc.steps,
        seed=sc.seed,
        gaia=sc.gaia,
        heuristic=sc.heuristic_params(),
        balancer=sc.balancer,
        band=sc.band,
        payload_delivery=sc.payload_delivery,
        **extra,
    )


def _behavior(sc: ScenarioConfig, lp_id: int, world: RwpWorld | None = None) -> RwpBehavior:
    return RwpBehavior(sc.model_config(), sc.seed, sc.migration_size, world)


def behavior_factory(sc: ScenarioConfig, shared: bool = True):
    """Behaviors for in-process LPs; ``shared`` lets them use one world replica."""
    world = RwpWorld(sc.model_config(), sc.seed) if shared else None
    return partial(_behavior, sc, world=world)


def run_tcp_lp(
    sc: ScenarioConfig, cfg: EngineConfig, lp_id: int, roster=None, timeout: float = 60.0, log_frames: bool = False
) -> LpResult:
    roster = roster or load_roster(sc.roster)
    if len(roster) != cfg.lps:
        raise SimulationError(f"roster lists {len(roster)} LPs, scenario has {cfg.lps}")
    transport = TcpTransport(lp_id, roster, timeout, log_frames)
    try:
        return run_lp_over(transport, cfg, _behavior(sc, lp_id), lp_id)
    finally:
        transport.close()


def _tcp_child(sc, cfg, lp_id, roster, timeout, log_frames, out):
    try:
        out.put((lp_id, True, run_tcp_lp(sc, cfg, lp_id, roster, timeout, log_frames)))
    except BaseException as exc:  # noqa: BLE001 - reported to the parent
        out.put((lp_id, False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"))


def run_tcp_mesh(
    sc: ScenarioConfig, cfg: EngineConfig, roster=None, timeout: float = 60.0, log_frames: bool = False
) -> RunReport:
    """Launch every LP of the roster as a local process and assemble their results."""
    roster = roster or load_roster(sc.roster)
    ctx = mp.get_context("fork")
    out = ctx.Queue()
    procs = [
        ctx.Process(target=_tcp_child, args=(sc, cfg, lp, roster, timeout, log_frames, out), daemon=True)
        for lp in sorted(roster)
    ]
    w0 = time.perf_counter()
    for p in procs:
        p.start()
    results, errors = [], []
    for _ in procs:
        try:
            lp, ok, payload = out.get(timeout=timeout + cfg.steps)
        except Exception:  # queue.Empty
            errors.append("timed out waiting for LP processes")
            break
        (results if ok else errors).append(payload)
        if not ok:
            break
    wct = time.perf_counter() - w0
    for p in procs:
        p.join(timeout=1 if errors else 10)
        if p.is_alive():
            p.terminate()
    if errors:
        raise SimulationError(f"TCP run failed: {errors[0]}")
    return assemble(cfg, results, wct)


def run_scenario(sc: ScenarioConfig, **extra) -> RunReport:
    sc.validate()
    cfg = engine_config(sc, **extra)
    if sc.transport == "tcp":
        return run_tcp_mesh(sc, cfg)
    factory = behavior_factory(sc)
    if sc.scheduler == "threads":
        return run_threaded(cfg, factory)
    return run_sequential(cfg, factory)
