"""Per-LP cost counters and the evaluation metrics derived from them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass
class MetricsLedger:
    lcc_count: int = 0
    rcc_count: int = 0
    rcc_bytes: int = 0
    mig_count: int = 0
    mig_bytes: int = 0
    handler_time: float = 0.0
    barrier_wait: float = 0.0
    heu_time: float = 0.0
    mig_cpu_time: float = 0.0
    mmc_residual: float = 0.0
    step_time: float = 0.0
    delivered: int = 0
    control_frames: int = 0
    control_bytes: int = 0

    def merged(self, other: "MetricsLedger") -> "MetricsLedger":
        return MetricsLedger(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def as_dict(self) -> dict:
        return asdict(self)


def merge(ledgers) -> MetricsLedger:
    total = MetricsLedger()
    for led in ledgers:
        total = total.merged(led)
    return total


def classify_delivery(sender_lp: int, dest_lp: int, ledger: MetricsLedger | None = None) -> str:
    kind = "local" if sender_lp == dest_lp else "remote"
    if ledger is not None:
        if kind == "local":
            ledger.lcc_count += 1
        else:
            ledger.rcc_count += 1
    return kind


def lcr(ledger: MetricsLedger) -> float:
    total = ledger.lcc_count + ledger.rcc_count
    if total == 0:
        return 1.0
    return ledger.lcc_count / total


def migration_ratio(total_migrations: int, num_entities: int, sim_length: int) -> float:
    if sim_length <= 0:
        raise ValueError("simulation length must be positive")
    return total_migrations / (num_entities * (sim_length / 1000))


def _mean_lcr(runs) -> float:
    vals = [r if isinstance(r, (int, float)) else lcr(r) for r in runs]
    return float(np.mean(vals))


def delta_lcr(run_on, run_off) -> float:
    """Mean LCR with self-clustering minus mean LCR without.

    Accepts ledgers, plain LCR values, or sequences of either.
    """
    on = run_on if isinstance(run_on, (list, tuple)) else [run_on]
    off = run_off if isinstance(run_off, (list, tuple)) else [run_off]
    return _mean_lcr(on) - _mean_lcr(off)


@dataclass(frozen=True)
class CostWeights:
    """Weights of the modeled execution cost, in seconds per unit.

    ``w_byte`` charges remote traffic by size (interactions and envelopes alike);
    the per-message weights follow the local/remote split.
    """

    w_local: float = 1e-9
    w_remote: float = 1e-7
    w_byte: float = 0.0
    include_times: bool = True


# Desk-scale LAN: remote messages cost 100x local ones and bytes go over ~100 Mbit/s.
LAN_WEIGHTS = CostWeights(w_local=1e-7, w_remote=1e-5, w_byte=8e-8)


def modeled_tec(ledger: MetricsLedger, w: CostWeights = CostWeights()) -> float:
    cost = (
        w.w_local * ledger.lcc_count
        + w.w_remote * ledger.rcc_count
        + w.w_remote * ledger.mig_count
        + w.w_byte * (ledger.rcc_bytes + ledger.mig_bytes)
    )
    if w.include_times:
        cost += ledger.handler_time + ledger.barrier_wait + ledger.heu_time + ledger.mig_cpu_time
    return cost


def parallel_efficiency(wct_one: float, wct_n: float, n: int) -> float:
    return wct_one / (n * wct_n)
