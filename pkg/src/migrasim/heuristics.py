"""Self-clustering heuristics evaluated per entity on LP-local interaction windows.

All three heuristics compare, for each entity, the interactions it sent to the most
popular foreign LP (eps) against those sent to its own LP (iota). The entity is a
migration candidate when eps/iota exceeds the migration factor and enough timesteps
have passed since its last migration. They differ only in what the window covers:

* H1: every send of the last ``kappa`` timesteps.
* H2: the last ``omega`` sends, however old.
* H3: as H2, but only evaluated once ``zeta`` sends accumulated since the previous
  evaluation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import NO_TIMESTEP


class HeuristicKind(enum.IntEnum):
    H1 = 1
    H2 = 2
    H3 = 3


@dataclass(frozen=True)
class HeuristicParams:
    kind: HeuristicKind = HeuristicKind.H1
    mf: float = 1.5
    mt: int = 10
    kappa: int = 32
    omega: int = 32
    zeta: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", HeuristicKind(self.kind))
        if not self.mf > 0:
            raise ValueError(f"mf must be > 0, got {self.mf}")
        if self.mt < 0:
            raise ValueError(f"mt must be >= 0, got {self.mt}")
        if min(self.kappa, self.omega, self.zeta) < 1:
            raise ValueError("kappa, omega and zeta must be >= 1")


@dataclass(frozen=True)
class Candidacy:
    entity: int
    target: int
    alpha: float


def _group_ranks(senders: np.ndarray):
    """For a sender column sorted ascending: rank within group, group starts, sizes."""
    n = len(senders)
    first = np.ones(n, dtype=bool)
    first[1:] = senders[1:] != senders[:-1]
    starts = np.flatnonzero(first)
    sizes = np.diff(np.append(starts, n))
    rank = np.arange(n) - np.repeat(starts, sizes)
    return rank, starts, sizes


class WindowStore:
    """Interaction windows of every entity an LP may host, as dense arrays."""

    def __init__(self, num_entities: int, num_lps: int, params: HeuristicParams):
        self.num_entities = num_entities
        self.num_lps = num_lps
        self.params = params
        self.sums = np.zeros((num_entities, num_lps), dtype=np.int64)

    def _scatter(self, target: np.ndarray, rows, cols, sign: int = 1) -> None:
        """target[row, col] += sign for every (row, col) pair, duplicates included."""
        flat, cnt = np.unique(rows * self.num_lps + cols, return_counts=True)
        target.reshape(-1)[flat] += sign * cnt

    def advance(self, t: int) -> None:
        """Start timestep t; must be called once per timestep, empty or not."""

    def record(self, senders, dest_lps, t: int) -> None:
        raise NotImplementedError

    def counts(self, ids) -> np.ndarray:
        return self.sums[np.asarray(ids, dtype=np.int64)]

    def export(self, e: int) -> list[int]:
        raise NotImplementedError

    def load(self, e: int, values: list[int]) -> None:
        raise NotImplementedError

    def clear(self, e: int) -> None:
        raise NotImplementedError

    def _eligible(self, ids: np.ndarray) -> np.ndarray:
        return ids

    def evaluate(self, ids, current_lp: int, t: int, last_migration, live=None):
        """Candidacies among ``ids`` (entities owned by ``current_lp`` and STABLE).

        Returns parallel arrays (entities, targets, alphas); alpha is +inf when the
        entity sent nothing locally.
        """
        p = self.params
        ids = self._eligible(np.asarray(ids, dtype=np.int64))
        if len(ids) == 0:
            return ids, ids.copy(), np.empty(0)
        c = self.sums[ids]
        iota = c[:, current_lp]
        ext = c.copy()
        ext[:, current_lp] = -1
        if live is not None:
            ext[:, ~np.asarray(live, dtype=bool)] = -1
        target = np.argmax(ext, axis=1)
        eps = ext[np.arange(len(ids)), target]
        last = np.asarray(last_migration)[ids] if np.ndim(last_migration) else np.full(len(ids), last_migration)
        mt_ok = (last == NO_TIMESTEP) | (t - last >= p.mt)
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha = np.where(iota > 0, eps / np.maximum(iota, 1), np.inf)
        cand = (eps > 0) & mt_ok & (alpha > p.mf)
        return ids[cand], target[cand], alpha[cand]


class TimeWindowStore(WindowStore):
    """H1: per-timestep destination histograms over the last kappa timesteps."""

    def __init__(self, num_entities, num_lps, params):
        super().__init__(num_entities, num_lps, params)
        # slot-major so that expiring one timestep touches contiguous memory
        self.ring = np.zeros((params.kappa, num_entities, num_lps), dtype=np.int64)
        self._now = None

    def advance(self, t):
        if self._now is not None and t != self._now + 1:
            raise ValueError(f"window advanced from {self._now} to {t}")
        self._now = t
        slot = t % self.params.kappa
        old = self.ring[slot]
        self.sums -= old
        old[...] = 0

    def record(self, senders, dest_lps, t):
        if self._now != t:
            raise ValueError(f"record at {t} but window is at {self._now}")
        if len(senders) == 0:
            return
        rows = np.asarray(senders, np.int64)
        cols = np.asarray(dest_lps, np.int64)
        self._scatter(self.ring[t % self.params.kappa], rows, cols)
        self._scatter(self.sums, rows, cols)

    def export(self, e):
        slots, lps = np.nonzero(self.ring[:, e])
        out = []
        for s, lp in zip(slots, lps):
            out += [int(s), int(lp), int(self.ring[s, e, lp])]
        return out

    def load(self, e, values):
        self.clear(e)
        for i in range(0, len(values), 3):
            s, lp, c = values[i : i + 3]
            self.ring[s, e, lp] = c
        self.sums[e] = self.ring[:, e].sum(axis=0)

    def clear(self, e):
        self.ring[:, e] = 0
        self.sums[e] = 0


class CountWindowStore(WindowStore):
    """H2/H3: ring of the destination LPs of the last omega sends."""

    def __init__(self, num_entities, num_lps, params):
        super().__init__(num_entities, num_lps, params)
        self.ring = np.full((num_entities, params.omega), -1, dtype=np.int64)
        self.head = np.zeros(num_entities, dtype=np.int64)
        self.fill = np.zeros(num_entities, dtype=np.int64)
        self.since_eval = np.zeros(num_entities, dtype=np.int64)

    def record(self, senders, dest_lps, t):
        """Append sends; ``senders`` must be grouped (sorted) in emission order."""
        if len(senders) == 0:
            return
        omega = self.params.omega
        senders = np.asarray(senders, dtype=np.int64)
        dest_lps = np.asarray(dest_lps, dtype=np.int64)
        rank, starts, sizes = _group_ranks(senders)
        uniq = senders[starts]
        k = np.repeat(sizes, sizes)
        # only the newest omega sends of a burst survive
        keep = rank >= k - omega
        s, r, lp = senders[keep], rank[keep], dest_lps[keep]
        pos = (self.head[s] + r) % omega
        old = self.ring[s, pos]
        had = old >= 0
        if had.any():
            self._scatter(self.sums, s[had], old[had], -1)
        self.ring[s, pos] = lp
        self._scatter(self.sums, s, lp)
        self.head[uniq] = (self.head[uniq] + sizes) % omega
        self.fill[uniq] = np.minimum(self.fill[uniq] + sizes, omega)
        self.since_eval[uniq] += sizes

    def ordered(self, e: int) -> list[int]:
        """Destination LPs of entity e, oldest first."""
        omega = self.params.omega
        n = int(self.fill[e])
        start = (int(self.head[e]) - n) % omega
        return [int(self.ring[e, (start + i) % omega]) for i in range(n)]

    def export(self, e):
        return [int(self.since_eval[e])] + self.ordered(e)

    def load(self, e, values):
        self.clear(e)
        if not values:
            return
        self.since_eval[e] = values[0]
        lps = values[1:]
        n = len(lps)
        self.ring[e, :n] = lps
        self.head[e] = n % self.params.omega
        self.fill[e] = n
        if n:
            self.sums[e] = np.bincount(np.asarray(lps), minlength=self.num_lps)

    def clear(self, e):
        self.ring[e] = -1
        self.head[e] = 0
        self.fill[e] = 0
        self.since_eval[e] = 0
        self.sums[e] = 0

    def _eligible(self, ids):
        if self.params.kind != HeuristicKind.H3:
            return ids
        ids = ids[self.since_eval[ids] >= self.params.zeta]
        self.since_eval[ids] = 0
        return ids


def make_window_store(num_entities: int, num_lps: int, params: HeuristicParams) -> WindowStore:
    if params.kind == HeuristicKind.H1:
        return TimeWindowStore(num_entities, num_lps, params)
    return CountWindowStore(num_entities, num_lps, params)


def record_sent(store: WindowStore, e: int, dest_lp: int, t: int) -> None:
    store.record(np.array([e]), np.array([dest_lp]), t)


def evaluate(
    store: WindowStore, e: int, current_lp: int, t: int, last_migration_ts: int = NO_TIMESTEP
) -> Candidacy | None:
    ids, targets, alphas = store.evaluate(np.array([e]), current_lp, t, last_migration_ts)
    if len(ids) == 0:
        return None
    return Candidacy(int(ids[0]), int(targets[0]), float(alphas[0]))
