"""Migration-cost isolation: interactions are accounted for but never transmitted."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..config import ConfigError, ScenarioConfig
from ..metrics import MetricsLedger
from ..runner import run_scenario


@dataclass
class MigcReport:
    wct_on: float
    wct_off: float
    ledger_on: MetricsLedger
    ledger_off: MetricsLedger

    @property
    def migc_estimate(self) -> float:
        return self.wct_on - self.wct_off

    @property
    def bytes_per_migration(self) -> float:
        n = self.ledger_on.mig_count
        return self.ledger_on.mig_bytes / n if n else 0.0


def migc_isolation_run(cfg: ScenarioConfig) -> MigcReport:
    """Run ``cfg`` with GAIA on and off, payload delivery disabled in both."""
    if cfg.payload_delivery:
        raise ConfigError("migc isolation needs payload_delivery off")
    on = run_scenario(replace(cfg, gaia=True))
    off = run_scenario(replace(cfg, gaia=False))
    return MigcReport(on.wct_seconds, off.wct_seconds, on.total, off.total)
