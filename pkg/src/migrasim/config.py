"""Scenario configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace

from .balancer import default_band
from .heuristics import HeuristicKind, HeuristicParams
from .model import MODEL_STATE_BYTES, ModelConfig


class ConfigError(ValueError):
    pass


def density_matched_side(num_entities: int) -> float:
    """Side giving a density of one agent per 10^4 square spaceunits."""
    return float(round(100.0 * math.sqrt(num_entities)))


@dataclass
class ScenarioConfig:
    seed: int = 1
    lps: int = 4
    ses: int = 10000
    steps: int = 3600
    side: float | None = None
    speed: float = 11.0
    range: float = 250.0
    pi: float = 0.2
    interaction_size: int = 1
    migration_size: int = 32
    gaia: bool = False
    heuristic: int = 1
    mf: float = 1.5
    mt: int = 10
    kappa: int = 32
    omega: int = 32
    zeta: int = 8
    balancer: bool = True
    band: int | None = None
    transport: str = "local"
    roster: str | None = None
    scheduler: str = "sequential"
    runs: int = 1
    payload_delivery: bool = True

    @property
    def area_side(self) -> float:
        return self.side if self.side is not None else density_matched_side(self.ses)

    @property
    def effective_band(self) -> int:
        return self.band if self.band is not None else default_band(self.ses, self.lps)

    def heuristic_params(self) -> HeuristicParams:
        return HeuristicParams(
            HeuristicKind(self.heuristic), self.mf, self.mt, self.kappa, self.omega, self.zeta
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_entities=self.ses,
            area_side=self.area_side,
            speed=self.speed,
            range=self.range,
            pi=self.pi,
            interaction_size=self.interaction_size,
            migration_pad=self.migration_size - MODEL_STATE_BYTES,
        )

    def validate(self) -> "ScenarioConfig":
        if self.lps < 1:
            raise ConfigError("lps must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.ses < self.lps:
            raise ConfigError("need at least one entity per LP")
        if self.migration_size < MODEL_STATE_BYTES:
            raise ConfigError(f"migration_size must be >= {MODEL_STATE_BYTES}")
        if self.band is not None and self.band < 0:
            raise ConfigError("band must be >= 0")
        if self.transport not in ("local", "tcp"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.scheduler not in ("sequential", "threads"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.transport == "tcp":
            if not self.roster:
                raise ConfigError("tcp transport needs a roster file")
            if not os.path.exists(self.roster):
                raise ConfigError(f"roster file {self.roster!r} does not exist")
        try:
            self.heuristic_params()
            self.model_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}
_BOOL = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("", "none", "auto"):
        return None
    try:
        if kind.startswith("bool"):
            return _BOOL[raw.lower()]
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return replace(base or ScenarioConfig(), **values)


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None


def _render(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ScenarioConfig) -> str:
    return "".join(f"{f.name} = {_render(getattr(cfg, f.name))}\n" for f in fields(cfg))


def with_overrides(cfg: ScenarioConfig, **overrides) -> ScenarioConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
