"""Random Waypoint agents on a toroidal square with proximity-broadcast interactions."""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .core import NO_TIMESTEP, SimulationError, hash_columns, stream_uniform

# stream purposes
INIT_X, INIT_Y, INIT_WX, INIT_WY = 1, 2, 3, 4
WAYPOINT_X, WAYPOINT_Y = 5, 6
EMIT = 7

MODEL_STATE_BYTES = 32
_MAX_ARRIVALS_PER_STEP = 64


@dataclass
class ModelConfig:
    num_entities: int = 10000
    area_side: float = 10000.0
    speed: float = 11.0
    sleep: int = 0
    range: float = 250.0
    pi: float = 0.2
    interaction_size: int = 1
    migration_pad: int = 0

    def validate(self):
        if self.num_entities < 1:
            raise ValueError("num_entities must be >= 1")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must be in [0, 1], got {self.pi}")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if not 0 < self.range < self.area_side / 2:
            raise ValueError("range must be in (0, area_side/2)")
        if self.sleep != 0:
            raise ValueError("only sleep = 0 is supported")
        if self.interaction_size < 0 or self.migration_pad < 0:
            raise ValueError("sizes must be non-negative")


@dataclass
class AgentState:
    x: float
    y: float
    wx: float
    wy: float


def toroidal_distance(a, b, side: float):
    """Euclidean distance with per-axis wraparound; broadcasts over (..., 2) arrays."""
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    d = np.minimum(d, side - d)
    return np.sqrt((d * d).sum(axis=-1))


def initial_agents(seed: int, n: int, side: float) -> np.ndarray:
    """(n, 4) array of x, y, waypoint x, waypoint y."""
    ids = np.arange(n, dtype=np.uint64)
    state = np.empty((n, 4), dtype=np.float64)
    for col, purpose in enumerate((INIT_X, INIT_Y, INIT_WX, INIT_WY)):
        state[:, col] = stream_uniform(seed, purpose, ids, -1) * side
    return state


def rwp_advance(state: np.ndarray, ids: np.ndarray, t: int, speed: float, side: float, seed: int):
    """Move every agent in-place by one timestep of Random Waypoint (sleep 0).

    Agents walk the straight segment toward their waypoint; arriving mid-step draws a
    fresh uniform waypoint and the remaining distance is spent toward it.
    """
    if speed <= 0 or len(state) == 0:
        return state
    remaining = np.full(len(state), float(speed))
    active = np.arange(len(state))
    for draw in range(_MAX_ARRIVALS_PER_STEP):
        pos = state[active, 0:2]
        wp = state[active, 2:4]
        delta = wp - pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        rem = remaining[active]
        arrive = dist <= rem
        go = ~arrive
        if go.any():
            g = active[go]
            frac = (rem[go] / dist[go])[:, None]
            state[g, 0:2] = pos[go] + delta[go] * frac
            remaining[g] = 0.0
        if not arrive.any():
            break
        a = active[arrive]
        state[a, 0:2] = wp[arrive]
        remaining[a] = rem[arrive] - dist[arrive]
        aid = ids[a].astype(np.uint64)
        state[a, 2] = stream_uniform(seed, WAYPOINT_X, aid, t, draw) * side
        state[a, 3] = stream_uniform(seed, WAYPOINT_Y, aid, t, draw) * side
        active = a[remaining[a] > 0.0]
        if len(active) == 0:
            break
    np.mod(state[:, 0:2], side, out=state[:, 0:2])
    return state


def rwp_step(agent: AgentState, speed: float, side: float, seed: int = 0, entity: int = 0, t: int = 0):
    """Single-agent convenience wrapper around :func:`rwp_advance`."""
    arr = np.array([[agent.x, agent.y, agent.wx, agent.wy]], dtype=np.float64)
    rwp_advance(arr, np.array([entity]), t, speed, side, seed)
    return AgentState(*map(float, arr[0]))


class NeighborGrid:
    """Uniform wraparound grid over all agent positions.

    Cells are at least ``range`` wide, so every neighbor of a point lies in its own
    cell or one of the eight around it.
    """

    def __init__(self, positions: np.ndarray, side: float, range_: float):
        self.positions = positions
        self._px = np.ascontiguousarray(positions[:, 0])
        self._py = np.ascontiguousarray(positions[:, 1])
        self.side = float(side)
        self.range = float(range_)
        self.ncell = max(1, int(math.floor(side / range_)))
        self.cell_size = side / self.ncell
        n = self.ncell
        cx = np.minimum((positions[:, 0] / self.cell_size).astype(np.int64), n - 1)
        cy = np.minimum((positions[:, 1] / self.cell_size).astype(np.int64), n - 1)
        self.cx, self.cy = cx, cy
        cell = cx * n + cy
        self.order = np.argsort(cell, kind="stable")
        sorted_cells = cell[self.order]
        self.starts = np.searchsorted(sorted_cells, np.arange(n * n + 1))

    def query_pairs(self, query: np.ndarray):
        """All (q, j) with j != q and toroidal distance <= range, sorted by (q, j)."""
        query = np.asarray(query, dtype=np.int64)
        if len(query) == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        n = self.ncell
        if n < 3:
            # offsets would alias; fall back to testing every agent
            npos = len(self.positions)
            qi = np.repeat(query, npos)
            cand = np.tile(np.arange(npos), len(query))
        else:
            off = np.array([-1, 0, 1])
            gx = (self.cx[query][:, None, None] + off[None, :, None]) % n
            gy = (self.cy[query][:, None, None] + off[None, None, :]) % n
            c = (gx * n + gy).reshape(-1)
            s = self.starts[c]
            cnt = self.starts[c + 1] - s
            total = int(cnt.sum())
            qi = np.repeat(np.repeat(query, 9), cnt)
            offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            cand = self.order[np.repeat(s, cnt) + offs]
        keep = cand != qi
        qi, cand = qi[keep], cand[keep]
        dx = np.abs(self._px[qi] - self._px[cand])
        dy = np.abs(self._py[qi] - self._py[cand])
        dx = np.minimum(dx, self.side - dx)
        dy = np.minimum(dy, self.side - dy)
        within = np.sqrt(dx * dx + dy * dy) <= self.range
        qi, cand = qi[within], cand[within]
        order = np.argsort(qi * len(self.positions) + cand)
        return qi[order], cand[order]


def neighbors_within(positions: np.ndarray, e: int, range_: float, side: float) -> set[int]:
    grid = NeighborGrid(np.asarray(positions, dtype=np.float64), side, range_)
    _, nb = grid.query_pairs(np.array([e]))
    return set(int(x) for x in nb)


def emitters(seed: int, ids: np.ndarray, t: int, pi: float) -> np.ndarray:
    """Subset of ``ids`` that broadcast an interaction at timestep t."""
    if pi <= 0.0 or len(ids) == 0:
        return ids[:0]
    if pi >= 1.0:
        return ids
    u = stream_uniform(seed, EMIT, ids.astype(np.uint64), t)
    return ids[u < pi]


def pack_agent(row) -> bytes:
    return struct.pack("<4d", *map(float, row))


def state_blob(row, size: int) -> bytes:
    """Packed agent state followed by deterministic filler up to ``size`` bytes."""
    head = pack_agent(row)
    if size < len(head):
        raise ValueError(f"migration size {size} is smaller than the {len(head)}-byte agent state")
    return head + bytes(size - len(head))


class RwpWorld:
    """Positions of every agent, advanced once per timestep.

    Movement and emission draws depend only on (seed, entity, timestep), so any LP can
    compute the whole world. LPs living in one process share one instance; each
    timestep's emission pairs are computed once and filtered per LP.
    """

    def __init__(self, config: ModelConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        self.state = initial_agents(seed, config.num_entities, config.area_side)
        self.now = NO_TIMESTEP
        self.prev_state = self.state.copy()
        self._ids = np.arange(config.num_entities)
        self._pairs = None
        self._hashes = None
        self._lock = threading.Lock()

    def advance_to(self, t: int) -> None:
        with self._lock:
            if t == self.now:
                return
            if t != self.now + 1:
                raise SimulationError(f"world at timestep {self.now} asked for {t}")
            cfg = self.config
            self.prev_state = self.state.copy()
            rwp_advance(self.state, self._ids, t, cfg.speed, cfg.area_side, self.seed)
            self.now = t
            self._pairs = None
            self._hashes = None

    def state_hashes(self) -> np.ndarray:
        """Per-agent hash of the current state, computed once per timestep."""
        with self._lock:
            if self._hashes is None:
                bits = self.state.view(np.uint64)
                self._hashes = hash_columns(self._ids, bits[:, 0], bits[:, 1], bits[:, 2], bits[:, 3])
            return self._hashes

    def pairs(self):
        """(sender, dest) for every emitting agent at the current timestep."""
        with self._lock:
            if self._pairs is None:
                cfg = self.config
                src = emitters(self.seed, self._ids, self.now, cfg.pi)
                if len(src) == 0:
                    empty = np.empty(0, dtype=np.int64)
                    self._pairs = (empty, empty)
                else:
                    grid = NeighborGrid(self.state[:, 0:2], cfg.area_side, cfg.range)
                    self._pairs = grid.query_pairs(src)
            return self._pairs


class RwpBehavior:
    """One LP's view of the RWP model.

    Receiving an interaction does not change agent state.
    """

    def __init__(self, config: ModelConfig, seed: int, migration_size: int = MODEL_STATE_BYTES, world: RwpWorld | None = None):
        config.validate()
        self.config = config
        self.seed = seed
        self.migration_size = migration_size
        self.world = world if world is not None else RwpWorld(config, seed)

    @property
    def state(self) -> np.ndarray:
        return self.world.state

    @property
    def payload_size(self) -> int:
        return self.config.interaction_size

    def deliver(self, events: np.ndarray, now: int):
        return None

    def prepare(self, now: int) -> None:
        """Compute the shared world for ``now`` ahead of the LP steps."""
        self.world.advance_to(now)
        self.world.pairs()

    def on_move(self, now: int, owned: np.ndarray):
        """Advance the world to ``now``; (sender, dest, deliver_ts) of owned emitters."""
        self.world.advance_to(now)
        senders, dests = self.world.pairs()
        if len(owned) < self.config.num_entities:
            mask = np.zeros(self.config.num_entities, dtype=bool)
            mask[owned] = True
            keep = mask[senders]
            senders, dests = senders[keep], dests[keep]
        return senders, dests, np.full(len(senders), now + 1, dtype=np.int64)

    def pack(self, e: int) -> tuple[bytes, tuple[float, ...]]:
        row = self.state[e]
        return state_blob(row, self.migration_size), tuple(float(v) for v in row)

    def unpack(self, e: int, blob: bytes, model_state) -> None:
        # the world may already have moved on to this timestep when shared in-process
        got = np.asarray(model_state, dtype=np.float64)
        w = self.world
        if not (np.array_equal(got, w.state[e]) or np.array_equal(got, w.prev_state[e])):
            raise SimulationError(f"replica divergence for entity {e}")

    def release(self, e: int) -> None:
        """Entity left this LP; the replica keeps advancing its position."""

    def state_hashes(self, owned: np.ndarray) -> np.ndarray:
        return self.world.state_hashes()[owned]
