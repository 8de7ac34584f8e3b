"""Domain types shared across the engine, plus the timestep-aware routing table."""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field

import numpy as np

NO_TIMESTEP = -1

# One row per interaction; payload bytes are carried separately (uniform size).
EVENT_DTYPE = np.dtype(
    [
        ("sender", "<u8"),
        ("dest", "<u8"),
        ("send_ts", "<u8"),
        ("deliver_ts", "<u8"),
        ("seq", "<u8"),
    ]
)

SEQ_SHIFT = 24


class SimulationError(RuntimeError):
    """Base class for fatal run errors."""


class RoutingError(SimulationError):
    pass


class ProtocolError(SimulationError):
    pass


class CausalityError(SimulationError):
    pass


class Status(enum.IntEnum):
    STABLE = 0
    CANDIDATE = 1
    GRANTED = 2
    IN_FLIGHT = 3


@dataclass(frozen=True)
class InteractionEvent:
    sender: int
    dest: int
    send_ts: int
    deliver_ts: int
    payload: bytes = b""
    seq: int = 0

    def __post_init__(self):
        if self.deliver_ts < self.send_ts + 1:
            raise CausalityError(
                f"deliver_ts {self.deliver_ts} must be >= send_ts + 1 ({self.send_ts + 1})"
            )

    @property
    def delta(self) -> int:
        return self.deliver_ts - self.send_ts


@dataclass
class EntityRecord:
    id: int
    state_blob: bytes
    model_state: tuple[float, ...]
    window: list[int] = field(default_factory=list)
    last_migration_ts: int = NO_TIMESTEP
    status: Status = Status.STABLE


def make_seq(send_ts, index):
    """Per-sender monotone sequence number: timestep in the high bits, emission index low."""
    return (np.asarray(send_ts, dtype=np.uint64) << np.uint64(SEQ_SHIFT)) | np.asarray(
        index, dtype=np.uint64
    )


def events_from_list(events: list[InteractionEvent]) -> np.ndarray:
    arr = np.empty(len(events), dtype=EVENT_DTYPE)
    for i, ev in enumerate(events):
        arr[i] = (ev.sender, ev.dest, ev.send_ts, ev.deliver_ts, ev.seq)
    return arr


def concat_events(parts) -> np.ndarray:
    """Concatenate event arrays through a flat integer view (cheaper than field promotion)."""
    parts = [p for p in parts if len(p)]
    if not parts:
        return np.empty(0, dtype=EVENT_DTYPE)
    if len(parts) == 1:
        return parts[0]
    flat = [np.ascontiguousarray(p).view(np.uint64) for p in parts]
    return np.concatenate(flat).view(EVENT_DTYPE)


def canonical_order(events: np.ndarray) -> np.ndarray:
    """Delivery order: ascending dest, then (sender, seq)."""
    if len(events) < 2:
        return events
    key = (events["dest"] << np.uint64(32)) | events["sender"]
    idx = np.argsort(key, kind="stable")
    k = key[idx]
    if np.any(k[1:] == k[:-1]):
        idx = np.lexsort((events["seq"], key))
    return events[idx]


# -- counter-based randomness -------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise over uint64 arrays."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _C1
        z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def hash_columns(*cols) -> np.ndarray:
    """Order-sensitive 64-bit hash of parallel integer columns."""
    cols = [np.asarray(c).astype(np.uint64, copy=False) for c in cols]
    shape = np.broadcast_shapes(*(c.shape for c in cols))
    h = np.zeros(shape, dtype=np.uint64)
    for c in cols:
        h = mix64(h ^ c)
    return h


def stream_uniform(seed: int, purpose: int, entity, t, draw=0) -> np.ndarray:
    """Uniform [0, 1) draws keyed by (seed, purpose, entity, timestep, draw index).

    Every value depends only on its key, so an entity's stream is the same on
    whichever LP evaluates it.
    """
    h = hash_columns(
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(purpose), entity, np.asarray(t) + 1, draw
    )
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# -- routing ------------------------------------------------------------------


class RoutingTable:
    """Entity -> owning LP, as a function of timestep.

    Every entity keeps its full list of (effective_from, lp) entries. The last two
    entries are mirrored into dense arrays so the common lookups (current and next
    timestep) stay vectorized.
    """

    def __init__(self, initial_lp):
        initial_lp = np.asarray(initial_lp, dtype=np.int64)
        n = len(initial_lp)
        self.num_entities = n
        self._history: list[list[tuple[int, int]]] = [[(0, int(lp))] for lp in initial_lp]
        self._cur_from = np.zeros(n, dtype=np.int64)
        self._cur_lp = initial_lp.copy()
        self._prev_from = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        self._prev_lp = initial_lp.copy()

    def _check(self, e):
        if not 0 <= e < self.num_entities:
            raise RoutingError(f"unknown entity {e}")

    def entries(self, e: int) -> list[tuple[int, int]]:
        self._check(e)
        return list(self._history[e])

    def lookup(self, e: int, t: int) -> int:
        self._check(e)
        if t < 0:
            raise RoutingError(f"negative timestep {t}")
        if t >= self._cur_from[e]:
            return int(self._cur_lp[e])
        hist = self._history[e]
        i = bisect.bisect_right(hist, (t, np.iinfo(np.int64).max)) - 1
        if i < 0:
            raise RoutingError(f"entity {e} has no owner at timestep {t}")
        return hist[i][1]

    def lookup_many(self, entities, t) -> np.ndarray:
        """Vectorized lookup; t may be a scalar or an array aligned with entities."""
        entities = np.asarray(entities, dtype=np.int64)
        if len(entities) and (entities.min() < 0 or entities.max() >= self.num_entities):
            raise RoutingError("unknown entity in lookup")
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), entities.shape)
        out = np.where(t >= self._cur_from[entities], self._cur_lp[entities], -1)
        slow = out < 0
        if slow.any():
            prev_ok = slow & (t >= self._prev_from[entities])
            out[prev_ok] = self._prev_lp[entities[prev_ok]]
            for i in np.flatnonzero(out < 0):
                out[i] = self.lookup(int(entities[i]), int(t[i]))
        return out

    def apply_notice(self, e: int, dest: int, effective_from: int) -> None:
        self._check(e)
        last = self._history[e][-1][0]
        if effective_from <= last:
            raise RoutingError(
                f"non-monotone notice for entity {e}: effective_from {effective_from} <= {last}"
            )
        self._history[e].append((effective_from, int(dest)))
        self._prev_from[e] = self._cur_from[e]
        self._prev_lp[e] = self._cur_lp[e]
        self._cur_from[e] = effective_from
        self._cur_lp[e] = dest

    def owners_at(self, t: int) -> np.ndarray:
        return self.lookup_many(np.arange(self.num_entities), t)


def route_lookup(table: RoutingTable, e: int, t: int) -> int:
    return table.lookup(e, t)


def route_apply_notice(table: RoutingTable, e: int, dest: int, effective_from: int) -> RoutingTable:
    table.apply_notice(e, dest, effective_from)
    return table
