"""Symmetric load balancing: candidate broadcast, grant computation, grant application.

Each LP keeps its population inside ``[initial - band, initial + band]``. A destination
never grants more inbound migrations than would push its projected population past the
upper edge (its own outbound is not counted on, since other LPs may deny it), and a
source never offers more candidates than could push it past the lower edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CandidateSummary:
    source: int
    counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("negative candidate count")
        if self.source in self.counts:
            raise ValueError("a source cannot request migrations to itself")


@dataclass(frozen=True)
class GrantDecision:
    dest: int
    source: int
    granted: int


def default_band(num_entities: int, num_lps: int) -> int:
    return math.ceil(0.01 * num_entities / num_lps)


def rank_candidates(ids, alphas) -> np.ndarray:
    """Order by alpha descending, ties by entity id ascending."""
    ids = np.asarray(ids, dtype=np.int64)
    alphas = np.asarray(alphas, dtype=np.float64)
    order = np.lexsort((ids, -alphas))
    return ids[order]


def summarize(source: int, targets) -> CandidateSummary:
    lps, counts = np.unique(np.asarray(targets, dtype=np.int64), return_counts=True)
    return CandidateSummary(source, {int(l): int(c) for l, c in zip(lps, counts)})


def inbound_slots(initial_population: int, band: int, projected_population: int) -> int:
    return max(0, initial_population + band - projected_population)


def outbound_budget(
    initial_population: int, band: int, projected_population: int, unresolved_outbound: int
) -> int:
    return max(0, projected_population - unresolved_outbound - (initial_population - band))


def allocate(requests: dict[int, int], slots: int) -> dict[int, int]:
    """Split ``slots`` across sources proportionally; leftovers go to the lowest ids."""
    total = sum(requests.values())
    if total <= slots:
        return dict(requests)
    if slots <= 0:
        return {s: 0 for s in requests}
    grants = {s: (slots * r) // total for s, r in requests.items()}
    left = slots - sum(grants.values())
    for s in sorted(requests):
        if left == 0:
            break
        if grants[s] < requests[s]:
            grants[s] += 1
            left -= 1
    return grants


def compute_grants(dest_lp: int, summaries, slots: int) -> list[GrantDecision]:
    """Grant decisions of ``dest_lp`` for every source that asked it for migrations."""
    requests = {}
    for s in summaries:
        if s.source == dest_lp:
            continue
        n = s.counts.get(dest_lp, 0)
        if n > 0:
            requests[s.source] = n
    granted = allocate(requests, slots)
    return [GrantDecision(dest_lp, src, granted[src]) for src in sorted(granted)]


class Balancer:
    """Per-LP balancing state.

    ``projected`` is the population once every decided migration has executed.
    Rounds are keyed by the timestep in which their candidacies were raised.
    """

    def __init__(self, lp_id: int, initial_population: int, band: int):
        self.lp_id = lp_id
        self.initial = initial_population
        self.band = band
        self.projected = initial_population
        self.rounds: dict[int, dict[int, list[int]]] = {}

    @property
    def unresolved(self) -> int:
        return sum(len(v) for r in self.rounds.values() for v in r.values())

    def limit(self, ranked_ids: np.ndarray) -> int:
        """How many of this step's ranked candidacies may be offered."""
        budget = outbound_budget(self.initial, self.band, self.projected, self.unresolved)
        return min(len(ranked_ids), budget)

    def open_round(self, t: int, ranked_ids, targets) -> CandidateSummary:
        per_dest: dict[int, list[int]] = {}
        for e, d in zip(ranked_ids, targets):
            per_dest.setdefault(int(d), []).append(int(e))
        if per_dest:
            self.rounds[t] = per_dest
        return CandidateSummary(self.lp_id, {d: len(v) for d, v in per_dest.items()})

    def grant(self, summaries) -> list[GrantDecision]:
        slots = inbound_slots(self.initial, self.band, self.projected)
        decisions = compute_grants(self.lp_id, summaries, slots)
        self.projected += sum(d.granted for d in decisions)
        return decisions

    def resolve(self, round_t: int, decisions) -> tuple[list[tuple[int, int]], list[int]]:
        """Apply grants for round ``round_t``: ([(entity, dest)] granted, [entity] denied)."""
        per_dest = self.rounds.pop(round_t, {})
        got = {}
        for d in decisions:
            if d.source != self.lp_id:
                raise ValueError(f"grant for LP {d.source} delivered to LP {self.lp_id}")
            got[d.dest] = d.granted
        missing = set(per_dest) - set(got)
        if missing:
            raise ValueError(f"no grant decision from LPs {sorted(missing)} for round {round_t}")
        granted, denied = [], []
        for dest in sorted(per_dest):
            ids = per_dest[dest]
            g = got[dest]
            if g > len(ids):
                raise ValueError(f"LP {dest} granted {g} > {len(ids)} requested")
            granted += [(e, dest) for e in ids[:g]]
            denied += ids[g:]
        self.projected -= len(granted)
        return granted, denied


def apply_grants(balancer: Balancer, round_t: int, decisions):
    return balancer.resolve(round_t, decisions)
