"""Timestepped LP execution: phased steps, barrier scheduling and run assembly.

Every LP runs the same eight phases per timestep:

1. instantiate entities whose envelopes arrived
2. apply routing notices (effective next timestep)
3. balancer: resolve grants for our candidacies, grant others' requests
4. deliver due events to owned entities in canonical order
5. model movement hook (emits new interactions)
6. heuristic evaluation on owned STABLE entities
7. serialize departing entities
8. transmit notices, envelopes, balancer messages and events due next timestep
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .balancer import Balancer, default_band, rank_candidates
from .core import (
    EVENT_DTYPE,
    NO_TIMESTEP,
    CausalityError,
    ProtocolError,
    RoutingTable,
    SimulationError,
    Status,
    canonical_order,
    concat_events,
    hash_columns,
    make_seq,
)
from .heuristics import HeuristicParams, make_window_store
from .metrics import MetricsLedger, lcr, merge, migration_ratio
from .migration import (
    MigrationPlan,
    emit_notices,
    flush_on_exit,
    instantiate_arrivals,
    serialize_departures,
)
from .transport.codec import Barrier, Bundle, envelope_frame_size, frame_size, interaction_frame_size
from .transport.local import LocalTransport

_EMPTY_EVENTS = np.empty(0, dtype=EVENT_DTYPE)


@dataclass
class EngineConfig:
    num_entities: int
    lps: int
    steps: int
    seed: int = 1
    gaia: bool = False
    heuristic: HeuristicParams = field(default_factory=HeuristicParams)
    balancer: bool = True
    band: int | None = None
    payload_delivery: bool = True
    scripted: tuple = ()
    exits: dict = field(default_factory=dict)
    record_events: bool = False
    initial_lp: object = None
    delays: dict = field(default_factory=dict)

    @property
    def effective_band(self) -> int:
        return self.band if self.band is not None else default_band(self.num_entities, self.lps)

    @property
    def migrations_enabled(self) -> bool:
        return self.gaia or bool(self.scripted)

    def assignment(self) -> np.ndarray:
        if self.initial_lp is not None:
            a = np.asarray(self.initial_lp, dtype=np.int64)
            if len(a) != self.num_entities or a.min() < 0 or a.max() >= self.lps:
                raise ValueError("initial_lp does not match num_entities / lps")
            return a
        return balanced_assignment(self.num_entities, self.lps, self.seed)


def balanced_assignment(n: int, lps: int, seed: int) -> np.ndarray:
    """Random placement giving every LP the same number of entities (+-1)."""
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % lps
    return out


def _events(senders, dests, send_ts, deliver_ts, seq) -> np.ndarray:
    ev = np.empty(len(senders), dtype=EVENT_DTYPE)
    ev["sender"], ev["dest"] = senders, dests
    ev["send_ts"], ev["deliver_ts"], ev["seq"] = send_ts, deliver_ts, seq
    return ev


def event_hashes(ev: np.ndarray) -> np.ndarray:
    return hash_columns(ev["sender"], ev["dest"], ev["send_ts"], ev["deliver_ts"], ev["seq"])


@dataclass
class LpResult:
    lp_id: int
    ledger: MetricsLedger
    records: np.ndarray  # per step: t, n_delivered, event hash sum, state hash sum
    populations: np.ndarray  # per step: owned after arrivals, owned at step end
    initial_population: int
    fires: list = field(default_factory=list)
    arrivals: list = field(default_factory=list)
    departures: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    delivered: list = field(default_factory=list)
    sent: list = field(default_factory=list)
    exited_at: int | None = None
    frame_log: list = field(default_factory=list)


class LogicalProcess:
    def __init__(self, lp_id: int, cfg: EngineConfig, behavior, initial_lp: np.ndarray):
        n = cfg.num_entities
        self.lp_id = lp_id
        self.cfg = cfg
        self.behavior = behavior
        self.num_lps = cfg.lps
        self.owned = np.asarray(initial_lp) == lp_id
        self.status = np.zeros(n, dtype=np.int8)
        self.last_mig = np.full(n, NO_TIMESTEP, dtype=np.int64)
        self.notify_ts = np.full(n, NO_TIMESTEP, dtype=np.int64)
        self.grant_dest = np.full(n, -1, dtype=np.int64)
        self.routing = RoutingTable(initial_lp)
        self.windows = make_window_store(n, cfg.lps, cfg.heuristic) if cfg.gaia else None
        self.initial_population = int(self.owned.sum())
        self.balancer = (
            Balancer(lp_id, self.initial_population, cfg.effective_band)
            if cfg.balancer and cfg.migrations_enabled and cfg.lps > 1
            else None
        )
        self.payload_size = behavior.payload_size
        self.frame_size = interaction_frame_size(self.payload_size)
        self.outbox: dict[int, list[np.ndarray]] = {}
        self.local_inbox = _EMPTY_EVENTS
        self.expected_arrivals: dict[int, set[int]] = {}
        self.live = set(range(cfg.lps))
        self.ledger = MetricsLedger()
        self.exited_at = None
        self._summary = None
        self._scripted: dict[int, list[tuple[int, int]]] = {}
        for fire, e, dest in cfg.scripted:
            self._scripted.setdefault(int(fire), []).append((int(e), int(dest)))
        self._records = []
        self._populations = []
        self.fires, self.arrivals, self.departures, self.notices_log = [], [], [], []
        self.delivered_log, self.sent_log = [], []

    # -- helpers --------------------------------------------------------------

    def _stash(self, ev: np.ndarray) -> None:
        if len(ev) == 0:
            return
        dts = ev["deliver_ts"]
        first = int(dts[0])
        if np.all(dts == first):
            self.outbox.setdefault(first, []).append(ev)
            return
        for d in np.unique(dts):
            self.outbox.setdefault(int(d), []).append(ev[dts == d])

    def take_stored_events(self) -> np.ndarray:
        parts = [a for k in sorted(self.outbox) for a in self.outbox[k]]
        self.outbox.clear()
        return concat_events(parts)

    def _count_control(self, msg, copies: int = 1) -> None:
        self.ledger.control_frames += copies
        self.ledger.control_bytes += copies * frame_size(msg)

    def _emitted(self, t, parts) -> np.ndarray:
        parts = [p for p in parts if p is not None and len(p[0])]
        if not parts:
            return _EMPTY_EVENTS
        senders = np.concatenate([np.asarray(p[0], dtype=np.int64) for p in parts])
        dests = np.concatenate([np.asarray(p[1], dtype=np.int64) for p in parts])
        dts = np.concatenate([np.asarray(p[2], dtype=np.int64) for p in parts])
        if np.any(dts < t + 1):
            raise CausalityError(f"LP {self.lp_id}: event emitted at {t} due before {t + 1}")
        if not np.all(self.owned[senders]):
            raise CausalityError(f"LP {self.lp_id}: emission by a non-owned entity at {t}")
        order = np.argsort(senders, kind="stable")
        senders, dests, dts = senders[order], dests[order], dts[order]
        first = np.ones(len(senders), dtype=bool)
        first[1:] = senders[1:] != senders[:-1]
        starts = np.flatnonzero(first)
        rank = np.arange(len(senders)) - np.repeat(starts, np.diff(np.append(starts, len(senders))))
        return _events(senders, dests, t, dts, make_seq(t, rank))

    # -- the step ---------------------------------------------------------------

    def step(self, t: int, inbound: list[Bundle]) -> dict[int, Bundle]:
        t_start = time.perf_counter()
        delay = self.cfg.delays.get((self.lp_id, t))
        if delay:
            time.sleep(delay)
        led = self.ledger
        events_in, notices, envelopes, summaries, grants = [], [], [], [], []
        for b in inbound:
            if b.barrier is not None and b.barrier.timestep != t - 1:
                raise ProtocolError(
                    f"LP {self.lp_id}: frames of timestep {b.barrier.timestep} received at {t}"
                )
            if len(b.events):
                events_in.append(b.events)
            notices += b.notices
            envelopes += b.envelopes
            summaries += b.candidates
            grants += b.grants

        # 1: arrivals
        arrived = instantiate_arrivals(self, envelopes, t)
        self.arrivals += [(t, e, self.lp_id) for e in arrived]
        pop_arrival = int(self.owned.sum())

        # 2: routing notices
        for n in notices:
            if n.effective_from != t + 1:
                raise ProtocolError(f"LP {self.lp_id}: notice effective {n.effective_from} at {t}")
            self.routing.apply_notice(n.entity, n.to_lp, n.effective_from)
            if n.internal:
                if n.to_lp != self.lp_id:
                    raise ProtocolError(f"LP {self.lp_id}: internal notice for LP {n.to_lp}")
                self.expected_arrivals.setdefault(t + 1, set()).add(n.entity)

        # 3: balancer
        out_grants = []
        if self.balancer is not None:
            try:
                granted, denied = self.balancer.resolve(t - 2, grants)
            except ValueError as exc:
                raise ProtocolError(f"LP {self.lp_id}: {exc}") from None
            for e, dest in granted:
                self.status[e] = Status.GRANTED
                self.notify_ts[e] = t + 1
                self.grant_dest[e] = dest
            for e in denied:
                self.status[e] = Status.STABLE
            if t >= 1:
                peers = {s.source for s in summaries}
                if peers != self.live - {self.lp_id}:
                    raise ProtocolError(f"LP {self.lp_id}: missing candidate summaries at {t}")
            out_grants = self.balancer.grant(summaries)
        elif grants or summaries:
            raise ProtocolError(f"LP {self.lp_id}: balancer traffic while balancer is off")

        # 4: deliver due events
        local_in = self.local_inbox
        self.local_inbox = _EMPTY_EVENTS
        incoming = concat_events([local_in] + events_in)
        if len(incoming):
            dts = incoming["deliver_ts"].astype(np.int64)
            if np.any(dts < t):
                raise CausalityError(f"LP {self.lp_id}: stale event received at {t}")
            later = dts > t
            if later.any():
                # stored events handed over by an exiting LP
                self._stash(incoming[later])
                incoming = incoming[~later]
        due = canonical_order(incoming)
        h0 = time.perf_counter()
        emitted_by_handlers = None
        if len(due):
            dest = due["dest"].astype(np.int64)
            if not np.all(self.owned[dest]):
                bad = int(dest[~self.owned[dest]][0])
                raise CausalityError(f"LP {self.lp_id}: event due at {t} for non-owned entity {bad}")
            emitted_by_handlers = self.behavior.deliver(due, t)
        led.handler_time += time.perf_counter() - h0
        led.delivered += len(due)
        ev_sum = int(event_hashes(due).sum(dtype=np.uint64)) if len(due) else 0
        if self.cfg.record_events and len(due):
            self.delivered_log.append(due.copy())

        # 5: movement and emission
        owned_ids = np.flatnonzero(self.owned)
        if self.windows is not None:
            h0 = time.perf_counter()
            self.windows.advance(t)
            led.heu_time += time.perf_counter() - h0
        moved = self.behavior.on_move(t, owned_ids)
        sent = self._emitted(t, [emitted_by_handlers, moved])
        if len(sent):
            if self.windows is not None:
                h0 = time.perf_counter()
                dest_lp = self.routing.lookup_many(
                    sent["dest"].astype(np.int64), sent["deliver_ts"].astype(np.int64)
                )
                self.windows.record(sent["sender"].astype(np.int64), dest_lp, t)
                led.heu_time += time.perf_counter() - h0
            self._stash(sent)
            if self.cfg.record_events:
                self.sent_log.append(sent.copy())
        state_sum = int(self.behavior.state_hashes(owned_ids).sum(dtype=np.uint64))

        # 6: heuristic / scripted candidacies
        if self.cfg.migrations_enabled:
            self._candidacies(t)

        # 7: departures
        bundles = {p: Bundle(payload_size=self.payload_size) for p in self.live if p != self.lp_id}
        for dest, env in serialize_departures(self, t):
            if dest not in bundles:
                raise ProtocolError(f"LP {self.lp_id}: migration target {dest} is not live")
            bundles[dest].envelopes.append(env)
            led.mig_count += 1
            led.mig_bytes += envelope_frame_size(env)
            self.departures.append((t, env.entity, self.lp_id, dest))

        # 8: transmit
        for e in np.flatnonzero(self.owned & (self.status == Status.GRANTED) & (self.notify_ts == t)):
            e = int(e)
            plan = MigrationPlan(e, self.lp_id, int(self.grant_dest[e]), t)
            internal, external = emit_notices(plan, self.live)
            self.routing.apply_notice(e, plan.dest, plan.notify_ts + 2)
            self.notices_log.append((t, e, plan.source, plan.dest))
            bundles[plan.dest].notices.append(internal)
            bystanders = sorted(self.live - {self.lp_id, plan.dest})
            for n, peer in zip(external, bystanders):
                bundles[peer].notices.append(n)
            self._count_control(internal, 1 + len(external))
        for d in out_grants:
            bundles[d.source].grants.append(d)
            self._count_control(d)
        if self.balancer is not None:
            summary = self._summary
            for b in bundles.values():
                b.candidates.append(summary)
            self._count_control(summary, len(bundles))

        due_next = self.outbox.pop(t + 1, None)
        if due_next:
            ev = concat_events(due_next)
            dest_lp = self.routing.lookup_many(ev["dest"].astype(np.int64), t + 1)
            local = dest_lp == self.lp_id
            n_local = int(local.sum())
            n_remote = len(ev) - n_local
            led.lcc_count += n_local
            led.rcc_count += n_remote
            if self.cfg.payload_delivery:
                led.rcc_bytes += n_remote * self.frame_size
                self.local_inbox = ev[local]
                if n_remote:
                    order = np.argsort(dest_lp, kind="stable")
                    ev, dest_lp = ev[order], dest_lp[order]
                    peers, starts = np.unique(dest_lp, return_index=True)
                    ends = np.append(starts[1:], len(ev))
                    for p, a, b in zip(peers.tolist(), starts.tolist(), ends.tolist()):
                        if p == self.lp_id:
                            continue
                        if p not in bundles:
                            raise ProtocolError(f"LP {self.lp_id}: event routed to dead LP {p}")
                        bundles[p].events = ev[a:b]

        exiting = self.cfg.exits.get(self.lp_id) == t
        if exiting:
            self._exit(t, bundles)

        barrier = Barrier(self.lp_id, t)
        for b in bundles.values():
            b.barrier = barrier
        self._count_control(barrier, len(bundles))

        led.step_time += time.perf_counter() - t_start
        self._records.append((t, len(due), ev_sum, state_sum))
        self._populations.append((pop_arrival, int(self.owned.sum())))
        return bundles

    def _candidacies(self, t: int) -> None:
        stable = self.owned & (self.status == Status.STABLE)
        h0 = time.perf_counter()
        if self.windows is not None and self.num_lps > 1:
            live = np.zeros(self.num_lps, dtype=bool)
            live[list(self.live)] = True
            ids, targets, alphas = self.windows.evaluate(
                np.flatnonzero(stable), self.lp_id, t, self.last_mig, live
            )
        else:
            ids, targets, alphas = np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
        self.ledger.heu_time += time.perf_counter() - h0
        scripted = [(e, d) for e, d in self._scripted.get(t, []) if stable[e]]
        if scripted:
            chosen = dict(zip(ids.tolist(), zip(targets.tolist(), alphas.tolist())))
            for e, d in scripted:
                chosen[e] = (d, np.inf)
            ids = np.array(list(chosen), dtype=np.int64)
            targets = np.array([v[0] for v in chosen.values()], dtype=np.int64)
            alphas = np.array([v[1] for v in chosen.values()], dtype=np.float64)
        ranked = rank_candidates(ids, alphas)
        target_of = dict(zip(ids.tolist(), targets.tolist()))
        if self.balancer is not None:
            ranked = ranked[: self.balancer.limit(ranked)]
            tg = [target_of[int(e)] for e in ranked]
            self._summary = self.balancer.open_round(t, ranked, tg)
            self.status[ranked] = Status.CANDIDATE
        else:
            tg = np.array([target_of[int(e)] for e in ranked], dtype=np.int64)
            self.status[ranked] = Status.GRANTED
            self.notify_ts[ranked] = t + 1
            self.grant_dest[ranked] = tg
        alpha_of = dict(zip(ids.tolist(), alphas.tolist()))
        self.fires += [(t, int(e), self.lp_id, target_of[int(e)], alpha_of[int(e)]) for e in ranked]

    def _exit(self, t: int, bundles: dict[int, Bundle]) -> None:
        if any(self.expected_arrivals.values()):
            raise ProtocolError(f"LP {self.lp_id} cannot exit with migrations inbound")
        rng = np.random.default_rng([self.cfg.seed, self.lp_id, t])
        target, stored = flush_on_exit(self, self.live - {self.lp_id}, rng)
        if target is not None:
            b = bundles[target]
            b.events = concat_events([b.events, stored])
        self.exited_at = t

    def result(self) -> LpResult:
        led = self.ledger
        led.mmc_residual = max(0.0, led.step_time - led.handler_time - led.heu_time - led.mig_cpu_time)
        return LpResult(
            lp_id=self.lp_id,
            ledger=led,
            records=np.array(self._records, dtype=np.uint64).reshape(-1, 4),
            populations=np.array(self._populations, dtype=np.int64).reshape(-1, 2),
            initial_population=self.initial_population,
            fires=self.fires,
            arrivals=self.arrivals,
            departures=self.departures,
            notices=self.notices_log,
            delivered=self.delivered_log,
            sent=self.sent_log,
            exited_at=self.exited_at,
        )


# -- digest -------------------------------------------------------------------

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def trace_digest(step_log: np.ndarray) -> int:
    """FNV-1a over the canonical per-timestep log (t, events, event hash, state hash)."""
    data = b"".join(struct.pack("<4Q", *map(int, row)) for row in step_log)
    return fnv1a64(data)


# -- reports ----------------------------------------------------------------------


@dataclass
class RunReport:
    config: EngineConfig
    results: list[LpResult]
    step_log: np.ndarray
    digest: int
    wct_seconds: float

    @property
    def ledgers(self) -> list[MetricsLedger]:
        return [r.ledger for r in self.results]

    @property
    def total(self) -> MetricsLedger:
        return merge(self.ledgers)

    @property
    def lcr(self) -> float:
        return lcr(self.total)

    @property
    def migrations(self) -> int:
        return self.total.mig_count

    @property
    def mr(self) -> float:
        return migration_ratio(self.migrations, self.config.num_entities, self.config.steps)

    @property
    def band(self) -> int:
        return self.config.effective_band

    def populations(self, which: int = 0) -> np.ndarray:
        """(steps, lps) owned counts; which=0 after arrivals, 1 at step end."""
        return np.stack([r.populations[:, which] for r in self.results], axis=1)

    def max_population_drift(self) -> int:
        init = np.array([r.initial_population for r in self.results])
        return int(np.abs(self.populations(0) - init).max())

    def events(self, kind: str) -> list:
        return sorted(x for r in self.results for x in getattr(r, kind))

    def delivered_events(self) -> np.ndarray:
        return concat_events([a for r in self.results for a in r.delivered])

    def sent_events(self) -> np.ndarray:
        return concat_events([a for r in self.results for a in r.sent])


def assemble(cfg: EngineConfig, results: list[LpResult], wct: float) -> RunReport:
    results = sorted(results, key=lambda r: r.lp_id)
    steps = cfg.steps
    log = np.zeros((steps, 4), dtype=np.uint64)
    log[:, 0] = np.arange(steps, dtype=np.uint64)
    for r in results:
        n = len(r.records)
        if n:
            log[:n, 1:] += r.records[:, 1:]
    return RunReport(cfg, results, log, trace_digest(log), wct)


# -- schedulers -------------------------------------------------------------------


def _make_lps(cfg: EngineConfig, behavior_factory) -> list[LogicalProcess]:
    initial = cfg.assignment()
    return [LogicalProcess(i, cfg, behavior_factory(i), initial) for i in range(cfg.lps)]


def run_sequential(cfg: EngineConfig, behavior_factory, transport: LocalTransport | None = None) -> RunReport:
    """Round-robin over LPs in one thread; barrier waits are emulated from busy times."""
    transport = transport or LocalTransport(cfg.lps)
    lps = _make_lps(cfg, behavior_factory)
    for lp in cfg.exits:
        if not 0 <= lp < cfg.lps:
            raise ValueError(f"exit for unknown LP {lp}")
    if cfg.exits and cfg.balancer and cfg.migrations_enabled:
        raise ValueError("dynamic LP exit requires the balancer to be off")
    w0 = time.perf_counter()
    active = list(lps)
    for t in range(cfg.steps):
        busy = []
        # the shared model replica is the same work for every LP; keep it out of busy times
        prepare = getattr(active[0].behavior, "prepare", None)
        if prepare is not None:
            prepare(t)
        for lp in active:
            lp.live = set(transport.live)
            inbound = transport.recv_all_for_step(lp.lp_id, t)
            b0 = time.perf_counter()
            out = lp.step(t, inbound)
            for dst, bundle in out.items():
                transport.send(lp.lp_id, dst, bundle, t)
            busy.append(time.perf_counter() - b0)
        slowest = max(busy)
        for lp, b in zip(active, busy):
            lp.ledger.barrier_wait += slowest - b
        for lp in [lp for lp in active if lp.exited_at == t]:
            transport.leave(lp.lp_id)
            active.remove(lp)
    wct = time.perf_counter() - w0
    return assemble(cfg, [lp.result() for lp in lps], wct)


def run_threaded(cfg: EngineConfig, behavior_factory, transport: LocalTransport | None = None) -> RunReport:
    """One thread per LP, synchronized by a barrier after every timestep."""
    if cfg.exits:
        raise ValueError("dynamic LP exit is only supported by the sequential scheduler")
    transport = transport or LocalTransport(cfg.lps)
    lps = _make_lps(cfg, behavior_factory)
    barrier = threading.Barrier(cfg.lps)
    errors = []

    def body(lp: LogicalProcess):
        try:
            for t in range(cfg.steps):
                out = lp.step(t, transport.recv_all_for_step(lp.lp_id, t))
                for dst, bundle in out.items():
                    transport.send(lp.lp_id, dst, bundle, t)
                w = time.perf_counter()
                barrier.wait()
                lp.ledger.barrier_wait += time.perf_counter() - w
        except threading.BrokenBarrierError:
            pass
        except BaseException as exc:  # noqa: BLE001 - surfaced after join
            errors.append(exc)
            barrier.abort()

    w0 = time.perf_counter()
    threads = [threading.Thread(target=body, args=(lp,), name=f"lp{lp.lp_id}") for lp in lps]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    wct = time.perf_counter() - w0
    if errors:
        raise errors[0]
    return assemble(cfg, [lp.result() for lp in lps], wct)


def run_lp_over(transport, cfg: EngineConfig, behavior, lp_id: int) -> LpResult:
    """Drive a single LP against a blocking transport (one process per LP)."""
    lp = LogicalProcess(lp_id, cfg, behavior, cfg.assignment())
    for t in range(cfg.steps):
        w = time.perf_counter()
        inbound = transport.recv_all_for_step(t) if t > 0 else []
        lp.ledger.barrier_wait += time.perf_counter() - w
        for dst, bundle in lp.step(t, inbound).items():
            transport.send(dst, bundle)
    # final barrier: make sure every peer consumed our last frames before closing
    transport.recv_all_for_step(cfg.steps)
    res = lp.result()
    res.frame_log = list(getattr(transport, "frame_log", []))
    return res


__all__ = [
    "EngineConfig",
    "LogicalProcess",
    "LpResult",
    "RunReport",
    "SimulationError",
    "assemble",
    "balanced_assignment",
    "fnv1a64",
    "run_lp_over",
    "run_sequential",
    "run_threaded",
    "trace_digest",
]
