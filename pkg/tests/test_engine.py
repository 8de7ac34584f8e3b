import itertools
from collections import Counter

import numpy as np
import pytest

from helpers import ScriptedBehavior, ownership_oracle, run_scripted
from migrasim import ScenarioConfig, run_scenario
from migrasim.core import CausalityError, InteractionEvent, ProtocolError, events_from_list
from migrasim.engine import EngineConfig, LogicalProcess, run_sequential, run_threaded
from migrasim.migration import flush_on_exit
from migrasim.runner import behavior_factory, engine_config
from migrasim.transport import Bundle, LocalTransport
from migrasim.transport.codec import Barrier, MsgType


def _event_keys(arr):
    return Counter(
        zip(*(arr[f].astype(np.int64).tolist() for f in ("sender", "dest", "send_ts", "deliver_ts", "seq")))
    )


def _frame_types(frames):
    return [f[4] for f in frames]


def _logged_run(n, lps, steps, plan, initial, **kw):
    behaviors = {}

    def factory(lp):
        behaviors[lp] = ScriptedBehavior(n, plan)
        return behaviors[lp]

    transport = LocalTransport(lps, log_frames=True)
    cfg = EngineConfig(num_entities=n, lps=lps, steps=steps, initial_lp=initial, record_events=True, **kw)
    return run_sequential(cfg, factory, transport), behaviors, transport


def _all_pairs_plan(n, steps):
    """Every entity messages every other entity each step, due next step."""
    return {t: [(s, d, t + 1) for s, d in itertools.permutations(range(n), 2)] for t in range(steps)}


def _owner_log(behaviors):
    return {(now, dest): lp for lp, b in behaviors.items() for now, _, dest, _, _ in b.log}


def test_single_lp_without_interactions():
    report, _ = run_scripted(2, 1, 10)
    assert report.total.rcc_count == 0 and report.total.lcc_count == 0
    assert report.lcr == 1.0
    assert report.total.barrier_wait == 0.0


def test_repeated_run_same_digest():
    sc = ScenarioConfig(ses=120, lps=2, steps=40, side=1000, gaia=True, mf=1.2)
    assert run_scenario(sc).digest == run_scenario(sc).digest


def test_next_step_delivery():
    report, beh, tr = _logged_run(2, 2, 10, {5: [(0, 1, 6)]}, [0, 1])
    assert beh[1].log == [(6, 0, 1, 5, 6)]
    sent_at = [t for t, src, dst, frames in tr.frame_log if MsgType.INTERACTION in _frame_types(frames)]
    assert sent_at == [5]
    assert report.total.rcc_count == 1


def test_future_event_held_at_origin():
    _, beh, tr = _logged_run(2, 2, 12, {5: [(0, 1, 9)]}, [0, 1])
    assert beh[1].log == [(9, 0, 1, 5, 9)]
    sent_at = [t for t, src, dst, frames in tr.frame_log if MsgType.INTERACTION in _frame_types(frames)]
    assert sent_at == [8]


@pytest.mark.parametrize("balancer,latency", [(False, 3), (True, 5)])
def test_migration_latency_and_routing_switch(balancer, latency):
    fire = 3
    notify = fire + latency - 2
    # entity 2 (on LP1) messages entity 0 around the switch
    plan = {notify - 1: [(2, 0, notify + 1)], notify: [(2, 0, notify + 2)]}
    report, beh, _ = _logged_run(4, 2, 14, plan, [0, 0, 1, 1], scripted=((fire, 0, 1),), balancer=balancer)
    assert [(t, e) for t, e, *_ in report.events("fires")] == [(fire, 0)]
    assert report.events("notices") == [(notify, 0, 0, 1)]
    assert report.events("departures") == [(notify + 1, 0, 0, 1)]
    assert report.events("arrivals") == [(fire + latency, 0, 1)]
    # the event due at notify+1 still reaches the source, the one due at notify+2 the destination
    assert beh[0].log == [(notify + 1, 2, 0, notify - 1, notify + 1)]
    assert beh[1].log == [(notify + 2, 2, 0, notify, notify + 2)]
    lp0 = report.results[0]
    assert lp0.populations[notify + 1, 1] == 1 and lp0.populations[notify, 1] == 2


def test_notice_fanout_four_lps():
    _, _, tr = _logged_run(4, 4, 8, {}, [0, 1, 2, 3], scripted=((1, 0, 2),), balancer=False)
    at_notify = {dst: _frame_types(fr) for t, src, dst, fr in tr.frame_log if t == 2 and src == 0}
    assert at_notify[2].count(MsgType.NOTICE_INTERNAL) == 1
    assert at_notify[1].count(MsgType.NOTICE_EXTERNAL) == 1
    assert at_notify[3].count(MsgType.NOTICE_EXTERNAL) == 1
    all_notices = sum(
        t.count(MsgType.NOTICE_INTERNAL) + t.count(MsgType.NOTICE_EXTERNAL) for t in at_notify.values()
    )
    assert all_notices == 3


def test_two_simultaneous_migrations_follow_ownership_oracle():
    n, steps = 6, 14
    initial = [0, 0, 1, 1, 2, 2]
    scripted = ((2, 0, 1), (2, 3, 2), (7, 0, 2))
    report, beh, _ = _logged_run(n, 3, steps, _all_pairs_plan(n, steps), initial, scripted=scripted, balancer=False)
    moves = [(t, e, dest) for t, e, _, dest in report.events("notices")]
    assert moves == [(3, 0, 1), (3, 3, 2), (8, 0, 2)]
    own = ownership_oracle(initial, moves, steps)
    log = _owner_log(beh)
    assert len(log) == (steps - 1) * n
    assert all(own[now, dest] == lp for (now, dest), lp in log.items())


def test_all_pairs_exactly_once_and_digest_matches_single_lp():
    n, steps = 6, 16
    plan = _all_pairs_plan(n, steps)
    scripted = ((1, 0, 1), (1, 1, 2), (4, 2, 0), (9, 0, 2))
    multi, _ = run_scripted(n, 3, steps, plan, [0, 0, 1, 1, 2, 2], scripted=scripted, balancer=False)
    single, _ = run_scripted(n, 1, steps, plan, [0] * n)
    assert multi.migrations == 4
    assert _event_keys(multi.delivered_events()) == _event_keys(multi.sent_events()) - Counter(
        {k: v for k, v in _event_keys(multi.sent_events()).items() if k[3] >= steps}
    )
    assert multi.digest == single.digest


def test_pending_future_events_stay_at_source():
    # entity 0 stores events due 4..8, then leaves LP0 (notify 3, depart 4, arrive 5)
    plan = {2: [(0, 1, d) for d in (4, 5, 6, 7, 8)] + [(1, 0, 6)]}
    report, beh = run_scripted(2, 2, 12, plan, [0, 0], scripted=((2, 0, 1),), balancer=False)
    assert report.events("arrivals") == [(5, 0, 1)]
    got = sorted(x for b in beh.values() for x in b.log)
    assert got == sorted([(d, 0, 1, 2, d) for d in (4, 5, 6, 7, 8)] + [(6, 1, 0, 2, 6)])
    assert [x for x in beh[1].log if x[2] == 0] == [(6, 1, 0, 2, 6)]
    assert _event_keys(report.delivered_events()) == _event_keys(report.sent_events())
    single, _ = run_scripted(2, 1, 12, plan, [0, 0])
    assert report.digest == single.digest


def test_round_trip_equals_unmigrated_run():
    n, steps = 4, 14
    plan = {t: [(1, 0, t + 1), (0, 2, t + 2), (3, 0, t + 1)] for t in range(steps)}
    trip, beh = run_scripted(n, 2, steps, plan, [0, 0, 1, 1], scripted=((1, 0, 1), (6, 0, 0)), balancer=False)
    assert [(t, e, lp) for t, e, lp in trip.events("arrivals")] == [(4, 0, 1), (9, 0, 0)]
    control, cbeh = run_scripted(n, 1, steps, plan, [0] * n)
    assert trip.digest == control.digest
    assert beh[0].received[0] == cbeh[0].received[0]


def test_emission_due_now_is_causality_error():
    with pytest.raises(CausalityError):
        run_scripted(2, 1, 5, {2: [(0, 1, 2)]}, [0, 0])


def test_event_for_non_owned_entity_is_causality_error():
    cfg = EngineConfig(num_entities=2, lps=2, steps=5, initial_lp=[0, 1])
    lp = LogicalProcess(0, cfg, ScriptedBehavior(2), cfg.assignment())
    bundle = Bundle(payload_size=0)
    bundle.events = events_from_list([InteractionEvent(0, 1, 0, 1)])
    with pytest.raises(CausalityError):
        lp.step(1, [bundle])


def test_stale_barrier_is_protocol_error():
    cfg = EngineConfig(num_entities=2, lps=2, steps=5, initial_lp=[0, 1])
    lp = LogicalProcess(0, cfg, ScriptedBehavior(2), cfg.assignment())
    bundle = Bundle(payload_size=0)
    bundle.barrier = Barrier(1, 0)
    with pytest.raises(ProtocolError):
        lp.step(3, [bundle])


def test_exit_handover_equivalent_to_no_exit():
    n, steps = 4, 14
    # entity 0 stores events due 5..9, migrates away from LP0, then LP0 leaves at step 4
    plan = {1: [(0, d % 3 + 1, d) for d in range(5, 10)]}
    plan.update({t: [(1, 2, t + 1), (3, 1, t + 2)] for t in range(2, steps)})
    initial = [0, 1, 2, 2]
    kw = dict(scripted=((1, 0, 1),), balancer=False)
    exiting, beh = run_scripted(n, 3, steps, plan, initial, exits={0: 4}, **kw)
    staying, _ = run_scripted(n, 3, steps, plan, initial, **kw)
    assert exiting.results[0].exited_at == 4
    assert exiting.digest == staying.digest
    assert _event_keys(exiting.delivered_events()) == _event_keys(exiting.sent_events()) - Counter(
        {k: v for k, v in _event_keys(exiting.sent_events()).items() if k[3] >= steps}
    )
    late = [x for b in beh.values() for x in b.log if x[1] == 0]
    assert sorted(x[0] for x in late) == [5, 6, 7, 8, 9]


def test_exit_handover_choice():
    cfg = EngineConfig(num_entities=4, lps=4, steps=5, initial_lp=[1, 1, 2, 3])
    lp = LogicalProcess(0, cfg, ScriptedBehavior(4), cfg.assignment())
    target, ev = flush_on_exit(lp, {1, 2, 3}, np.random.default_rng(7))
    assert target is None and len(ev) == 0
    picks = []
    for _ in range(2):
        lp._stash(events_from_list([InteractionEvent(1, 2, 0, 6), InteractionEvent(1, 3, 0, 9)]))
        target, ev = flush_on_exit(lp, {1, 2, 3}, np.random.default_rng(7))
        assert len(ev) == 2 and not lp.outbox
        picks.append(target)
    assert picks[0] == picks[1] and picks[0] in {1, 2, 3}
    with pytest.raises(ProtocolError):
        flush_on_exit(lp, {0}, np.random.default_rng(7))


def test_threaded_matches_sequential():
    sc = ScenarioConfig(ses=200, lps=4, steps=60, side=1400, gaia=True, mf=1.2)
    seq = run_scenario(sc)
    thr = run_threaded(engine_config(sc), behavior_factory(sc))
    assert seq.digest == thr.digest
    assert seq.migrations == thr.migrations and seq.total.lcc_count == thr.total.lcc_count


def test_shared_world_matches_private_replicas():
    sc = ScenarioConfig(ses=200, lps=3, steps=60, side=1400, gaia=True, mf=1.2)
    shared = run_sequential(engine_config(sc), behavior_factory(sc, shared=True))
    private = run_sequential(engine_config(sc), behavior_factory(sc, shared=False))
    assert shared.digest == private.digest and shared.migrations == private.migrations > 0


@pytest.mark.parametrize("runner", [run_sequential, run_threaded])
def test_delayed_lp_makes_others_wait(runner):
    def run(delays):
        cfg = EngineConfig(num_entities=8, lps=4, steps=10, delays=delays)
        return runner(cfg, lambda lp: ScriptedBehavior(8))

    base = run({})
    slow = run({(2, 5): 0.05})
    for lp in (0, 1, 3):
        extra = slow.results[lp].ledger.barrier_wait - base.results[lp].ledger.barrier_wait
        assert extra >= 0.045


def test_population_stays_in_band():
    sc = ScenarioConfig(ses=400, lps=4, steps=150, side=2000, speed=3, gaia=True, mf=1.2, band=2)
    report = run_scenario(sc)
    assert report.migrations > 0
    assert report.max_population_drift() <= sc.band
