"""In-memory transport: bundles are handed over by reference within one process."""

from __future__ import annotations

import threading

from ..core import ProtocolError
from .codec import Bundle


class LocalTransport:
    """Mailboxes keyed by (receiver, timestep).

    A bundle sent during timestep ``t`` is received at ``t + 1``. ``log_frames`` keeps
    the encoded frame sequence of every bundle for wire-level comparisons.
    """

    def __init__(self, num_lps: int, log_frames: bool = False):
        self.num_lps = num_lps
        self.live = set(range(num_lps))
        self._live_at: dict[int, frozenset] = {}
        self._boxes: dict[tuple[int, int], list[tuple[int, Bundle]]] = {}
        self._lock = threading.Lock()
        self.log_frames = log_frames
        self.frame_log: list[tuple[int, int, int, list[bytes]]] = []

    def send(self, src: int, dst: int, bundle: Bundle, t: int) -> None:
        with self._lock:
            if dst not in self.live:
                raise ProtocolError(f"LP {src} sent to departed LP {dst}")
            self._live_at.setdefault(t, frozenset(self.live))
            self._boxes.setdefault((dst, t + 1), []).append((src, bundle))
            if self.log_frames:
                self.frame_log.append((t, src, dst, bundle.frames()))

    def recv_all_for_step(self, lp: int, t: int) -> list[Bundle]:
        """Every peer's bundle for timestep ``t``, ordered by sender id."""
        with self._lock:
            got = sorted(self._boxes.pop((lp, t), []), key=lambda x: x[0])
            senders_live = self._live_at.get(t - 1)
        if t > 0 and senders_live is not None:
            expected = sorted(senders_live - {lp})
            if [s for s, _ in got] != expected:
                raise ProtocolError(
                    f"LP {lp} at {t}: bundles from {[s for s, _ in got]}, expected {expected}"
                )
        return [b for _, b in got]

    def leave(self, lp: int) -> None:
        with self._lock:
            self.live.discard(lp)
