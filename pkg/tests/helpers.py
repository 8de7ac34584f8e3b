"""Test doubles and small oracles shared by the test modules."""

from __future__ import annotations

import struct

import numpy as np

from migrasim.core import NO_TIMESTEP, hash_columns
from migrasim.engine import EngineConfig, run_sequential
from migrasim.heuristics import HeuristicKind, HeuristicParams, make_window_store


class ScriptedBehavior:
    """Entities emit a fixed schedule of interactions and count what they receive.

    ``plan`` maps a timestep to (sender, dest, deliver_ts) triples; only the LP owning
    the sender emits them. The received counter travels with migrating entities, so
    the state digest catches lost, duplicated or misrouted events.
    """

    payload_size = 0

    def __init__(self, num_entities: int, plan: dict | None = None, blob_size: int = 32):
        self.n = num_entities
        self.plan = plan or {}
        self.blob_size = blob_size
        self.received = np.zeros(num_entities, dtype=np.int64)
        self.log: list[tuple[int, int, int, int, int]] = []

    def deliver(self, events, now):
        for ev in events:
            self.log.append((now, int(ev["sender"]), int(ev["dest"]), int(ev["send_ts"]), int(ev["deliver_ts"])))
        np.add.at(self.received, events["dest"].astype(np.int64), 1)
        return None

    def on_move(self, now, owned):
        mine = set(int(e) for e in owned)
        rows = [r for r in self.plan.get(now, []) if r[0] in mine]
        if not rows:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty
        s, d, dt = (np.array(c, dtype=np.int64) for c in zip(*rows))
        return s, d, dt

    def pack(self, e):
        head = struct.pack("<q", int(self.received[e]))
        return head + bytes(self.blob_size - len(head)), (float(self.received[e]), 0.0, 0.0, 0.0)

    def unpack(self, e, blob, model_state):
        self.received[e] = struct.unpack_from("<q", blob)[0]

    def release(self, e):
        self.received[e] = 0

    def state_hashes(self, owned):
        return hash_columns(owned, self.received[owned])


def run_scripted(n, lps, steps, plan=None, initial_lp=None, **kw):
    """Sequential run with one ScriptedBehavior per LP; returns (report, behaviors)."""
    behaviors = {}

    def factory(lp):
        behaviors[lp] = ScriptedBehavior(n, plan)
        return behaviors[lp]

    cfg = EngineConfig(num_entities=n, lps=lps, steps=steps, initial_lp=initial_lp, record_events=True, **kw)
    return run_sequential(cfg, factory), behaviors


def ownership_oracle(initial_lp, moves, steps):
    """Per-timestep owner array from (notify_ts, entity, dest) moves, switching at notify+2."""
    own = np.tile(np.asarray(initial_lp, dtype=np.int64), (steps + 3, 1))
    for notify, e, dest in sorted(moves):
        own[notify + 2 :, e] = dest
    return own


def brute_candidacies(kind, params, sends, t, ids, cur_lp, last_mig, since, num_lps):
    """Recount every window from the raw send log and apply the candidacy rule."""
    out = {}
    for e in ids:
        mine = [(ts, lp) for ts, lp in sends.get(e, []) if ts <= t]
        if kind == HeuristicKind.H1:
            window = [lp for ts, lp in mine if ts > t - params.kappa]
        else:
            window = [lp for _, lp in mine][-params.omega :]
        if kind == HeuristicKind.H3:
            if since[e] < params.zeta:
                continue
            since[e] = 0
        counts = [window.count(lp) for lp in range(num_lps)]
        iota = counts[cur_lp]
        best, eps = None, 0
        for lp in range(num_lps):
            if lp != cur_lp and counts[lp] > eps:
                best, eps = lp, counts[lp]
        if eps == 0:
            continue
        if last_mig[e] != NO_TIMESTEP and t - last_mig[e] < params.mt:
            continue
        alpha = float("inf") if iota == 0 else eps / iota
        if alpha > params.mf:
            out[e] = (best, alpha)
    return out


def run_trace(kind, seed, n=12, lps=4, steps=40):
    """Random send trace checked step by step; returns (mismatching evaluations, events)."""
    rng = np.random.default_rng(seed)
    params = HeuristicParams(
        kind=kind,
        mf=float(rng.choice([1.0, 1.5, 2.0, 3.0])),
        mt=int(rng.integers(0, 8)),
        kappa=int(rng.integers(1, 8)),
        omega=int(rng.integers(1, 10)),
        zeta=int(rng.integers(1, 5)),
    )
    store = make_window_store(n, lps, params)
    sends, since = {}, np.zeros(n, dtype=np.int64)
    last_mig = rng.integers(-1, 5, n)
    mismatches = events = 0
    for t in range(steps):
        store.advance(t)
        k = int(rng.integers(0, 3 * n))
        senders = np.sort(rng.integers(0, n, k))
        dests = rng.integers(0, lps, k)
        store.record(senders, dests, t)
        events += k
        for s, d in zip(senders, dests):
            sends.setdefault(int(s), []).append((t, int(d)))
            since[s] += 1
        ids = np.flatnonzero(rng.random(n) < 0.7)
        cur = int(rng.integers(0, lps))
        want = brute_candidacies(kind, params, sends, t, ids, cur, last_mig, since, lps)
        got_ids, got_t, got_a = store.evaluate(ids, cur, t, last_mig)
        got = {int(e): (int(d), float(a)) for e, d, a in zip(got_ids, got_t, got_a)}
        mismatches += got != want
    return mismatches, events
