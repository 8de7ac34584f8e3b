"""Migration choreography: notices, envelope serialization and instantiation.

Timeline of one migration notified at timestep ``n``:

* ``n``:   source sends the internal notice to the destination and external notices
           to every other LP; routing switches at ``n + 2`` everywhere.
* ``n+1``: the entity handles its due events at the source, then is serialized into
           an envelope.
* ``n+2``: the destination instantiates it before delivering that step's events.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import NO_TIMESTEP, ProtocolError, Status


@dataclass(frozen=True)
class MigrationPlan:
    entity: int
    source: int
    dest: int
    notify_ts: int

    def __post_init__(self):
        if self.dest == self.source:
            raise ValueError("migration destination equals source")


@dataclass(frozen=True)
class Notice:
    internal: bool
    entity: int
    from_lp: int
    to_lp: int
    effective_from: int


@dataclass
class MigrationEnvelope:
    entity: int
    state_blob: bytes
    model_state: tuple[float, ...]
    last_migration_ts: int = NO_TIMESTEP
    window: list[int] = field(default_factory=list)


def emit_notices(plan: MigrationPlan, live_lps) -> tuple[Notice, list[Notice]]:
    """Internal notice for the destination plus one external notice per bystander LP."""
    eff = plan.notify_ts + 2
    internal = Notice(True, plan.entity, plan.source, plan.dest, eff)
    external = [
        Notice(False, plan.entity, plan.source, plan.dest, eff)
        for lp in sorted(live_lps)
        if lp not in (plan.source, plan.dest)
    ]
    return internal, external


def serialize_departures(lp, t: int) -> list[tuple[int, MigrationEnvelope]]:
    """Pack and remove every GRANTED entity of ``lp`` whose notify happened at t-1.

    Returns (dest, envelope) pairs; the entity's stored future events stay behind in
    the LP's outbox.
    """
    leaving = np.flatnonzero(
        lp.owned & (lp.status == Status.GRANTED) & (lp.notify_ts == t - 1)
    )
    out = []
    if len(leaving) == 0:
        return out
    t0 = time.perf_counter()
    for e in leaving:
        e = int(e)
        blob, model_state = lp.behavior.pack(e)
        window = lp.windows.export(e) if lp.windows is not None else []
        last = int(lp.last_mig[e])
        out.append((int(lp.grant_dest[e]), MigrationEnvelope(e, blob, model_state, last, window)))
        if lp.windows is not None:
            lp.windows.clear(e)
        lp.behavior.release(e)
        lp.owned[e] = False
        lp.status[e] = Status.IN_FLIGHT
        lp.notify_ts[e] = NO_TIMESTEP
    lp.ledger.mig_cpu_time += time.perf_counter() - t0
    return out


def instantiate_arrivals(lp, envelopes, t: int) -> list[int]:
    arrived = []
    t0 = time.perf_counter()
    for env in sorted(envelopes, key=lambda m: m.entity):
        e = env.entity
        if lp.owned[e]:
            raise ProtocolError(f"LP {lp.lp_id}: entity {e} arrived but is already owned")
        expected = lp.expected_arrivals.get(t, set())
        if e not in expected:
            raise ProtocolError(f"LP {lp.lp_id}: unannounced arrival of entity {e} at {t}")
        expected.discard(e)
        lp.behavior.unpack(e, env.state_blob, env.model_state)
        if lp.windows is not None:
            lp.windows.load(e, env.window)
        lp.owned[e] = True
        lp.status[e] = Status.STABLE
        lp.last_mig[e] = t
        arrived.append(e)
    leftover = lp.expected_arrivals.pop(t, set())
    if leftover:
        raise ProtocolError(f"LP {lp.lp_id}: announced entities {sorted(leftover)} never arrived")
    lp.ledger.mig_cpu_time += time.perf_counter() - t0
    return arrived


def flush_on_exit(lp, remaining, rng) -> tuple[int | None, np.ndarray]:
    """Hand every stored future event of an exiting LP to one random remaining LP."""
    remaining = sorted(set(remaining) - {lp.lp_id})
    if not remaining:
        raise ProtocolError(f"LP {lp.lp_id} cannot exit: no LP left to take its stored events")
    if lp.owned.any():
        raise ProtocolError(f"LP {lp.lp_id} cannot exit while owning entities")
    events = lp.take_stored_events()
    if len(events) == 0:
        return None, events
    return int(rng.choice(remaining)), events
