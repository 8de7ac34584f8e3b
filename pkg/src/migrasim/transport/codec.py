"""Bit-exact frame codec.

Frame = length (u32 LE, body bytes) | msg_type (u8) | body. All integers are
little-endian fixed width; byte blobs and lists carry a u32 length/count prefix.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from ..balancer import CandidateSummary, GrantDecision
from ..core import EVENT_DTYPE, NO_TIMESTEP, InteractionEvent, ProtocolError
from ..migration import MigrationEnvelope, Notice

HEADER = struct.Struct("<IB")
_INTERACTION_FIXED = struct.Struct("<QQQQQI")
_NOTICE = struct.Struct("<QIIQ")
_GRANT = struct.Struct("<III")
_BARRIER = struct.Struct("<IQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_MODEL = struct.Struct("<4d")

INTERACTION_OVERHEAD = _INTERACTION_FIXED.size  # 44
_NONE_TS = 0xFFFFFFFFFFFFFFFF


class CodecError(ProtocolError):
    pass


class MsgType(enum.IntEnum):
    INTERACTION = 1
    NOTICE_INTERNAL = 2
    NOTICE_EXTERNAL = 3
    MIGRATION_ENVELOPE = 4
    LB_CANDIDATES = 5
    LB_GRANT = 6
    BARRIER = 7


@dataclass(frozen=True)
class Barrier:
    lp_id: int
    timestep: int


def _frame(kind: MsgType, body: bytes) -> bytes:
    return HEADER.pack(len(body), kind) + body


def interaction_body_size(payload_size: int) -> int:
    return INTERACTION_OVERHEAD + payload_size


def interaction_frame_size(payload_size: int) -> int:
    return HEADER.size + interaction_body_size(payload_size)


def envelope_body(env: MigrationEnvelope) -> bytes:
    last = _NONE_TS if env.last_migration_ts == NO_TIMESTEP else env.last_migration_ts
    if len(env.model_state) != 4:
        raise CodecError("model_state must hold exactly 4 floats")
    return b"".join(
        [
            _U64.pack(env.entity),
            _U32.pack(len(env.state_blob)),
            bytes(env.state_blob),
            _MODEL.pack(*env.model_state),
            _U64.pack(last),
            _U32.pack(len(env.window)),
            struct.pack(f"<{len(env.window)}I", *env.window),
        ]
    )


def envelope_frame_size(env: MigrationEnvelope) -> int:
    return HEADER.size + 8 + 4 + len(env.state_blob) + 32 + 8 + 4 + 4 * len(env.window)


def frame_size(msg) -> int:
    """Encoded length of ``msg`` without encoding it."""
    if isinstance(msg, Notice):
        return HEADER.size + _NOTICE.size
    if isinstance(msg, Barrier):
        return HEADER.size + _BARRIER.size
    if isinstance(msg, GrantDecision):
        return HEADER.size + _GRANT.size
    if isinstance(msg, CandidateSummary):
        return HEADER.size + 8 + 8 * len(msg.counts)
    if isinstance(msg, MigrationEnvelope):
        return envelope_frame_size(msg)
    return len(encode(msg))


def encode(msg) -> bytes:
    """Encode one message as a single frame."""
    if isinstance(msg, InteractionEvent):
        body = _INTERACTION_FIXED.pack(
            msg.sender, msg.dest, msg.send_ts, msg.deliver_ts, msg.seq, len(msg.payload)
        ) + bytes(msg.payload)
        return _frame(MsgType.INTERACTION, body)
    if isinstance(msg, Notice):
        kind = MsgType.NOTICE_INTERNAL if msg.internal else MsgType.NOTICE_EXTERNAL
        return _frame(kind, _NOTICE.pack(msg.entity, msg.from_lp, msg.to_lp, msg.effective_from))
    if isinstance(msg, MigrationEnvelope):
        return _frame(MsgType.MIGRATION_ENVELOPE, envelope_body(msg))
    if isinstance(msg, CandidateSummary):
        items = sorted(msg.counts.items())
        body = _U32.pack(msg.source) + _U32.pack(len(items))
        body += b"".join(struct.pack("<II", d, c) for d, c in items)
        return _frame(MsgType.LB_CANDIDATES, body)
    if isinstance(msg, GrantDecision):
        return _frame(MsgType.LB_GRANT, _GRANT.pack(msg.dest, msg.source, msg.granted))
    if isinstance(msg, Barrier):
        return _frame(MsgType.BARRIER, _BARRIER.pack(msg.lp_id, msg.timestep))
    raise CodecError(f"cannot encode {type(msg).__name__}")


def _need(body: bytes, off: int, n: int):
    if off + n > len(body):
        raise CodecError("truncated frame body")


def decode_body(kind: int, body: bytes):
    try:
        kind = MsgType(kind)
    except ValueError:
        raise CodecError(f"unknown message tag {kind}") from None
    if kind == MsgType.INTERACTION:
        _need(body, 0, INTERACTION_OVERHEAD)
        s, d, st, dt, seq, plen = _INTERACTION_FIXED.unpack_from(body)
        if len(body) != INTERACTION_OVERHEAD + plen:
            raise CodecError("interaction payload length mismatch")
        return InteractionEvent(s, d, st, dt, bytes(body[INTERACTION_OVERHEAD:]), seq)
    if kind in (MsgType.NOTICE_INTERNAL, MsgType.NOTICE_EXTERNAL):
        if len(body) != _NOTICE.size:
            raise CodecError("bad notice size")
        e, f, to, eff = _NOTICE.unpack(body)
        return Notice(kind == MsgType.NOTICE_INTERNAL, e, f, to, eff)
    if kind == MsgType.MIGRATION_ENVELOPE:
        _need(body, 0, 12)
        e, = _U64.unpack_from(body, 0)
        n, = _U32.unpack_from(body, 8)
        off = 12
        _need(body, off, n + 32 + 8 + 4)
        blob = bytes(body[off : off + n])
        off += n
        model = _MODEL.unpack_from(body, off)
        off += 32
        last, = _U64.unpack_from(body, off)
        off += 8
        cnt, = _U32.unpack_from(body, off)
        off += 4
        if len(body) != off + 4 * cnt:
            raise CodecError("bad envelope window length")
        window = list(struct.unpack_from(f"<{cnt}I", body, off))
        last = NO_TIMESTEP if last == _NONE_TS else last
        return MigrationEnvelope(e, blob, tuple(model), last, window)
    if kind == MsgType.LB_CANDIDATES:
        _need(body, 0, 8)
        src, cnt = struct.unpack_from("<II", body)
        if len(body) != 8 + 8 * cnt:
            raise CodecError("bad candidate list length")
        pairs = struct.unpack_from(f"<{2 * cnt}I", body, 8)
        return CandidateSummary(src, {pairs[i]: pairs[i + 1] for i in range(0, 2 * cnt, 2)})
    if kind == MsgType.LB_GRANT:
        if len(body) != _GRANT.size:
            raise CodecError("bad grant size")
        return GrantDecision(*_GRANT.unpack(body))
    if len(body) != _BARRIER.size:
        raise CodecError("bad barrier size")
    return Barrier(*_BARRIER.unpack(body))


def decode(frame: bytes):
    if len(frame) < HEADER.size:
        raise CodecError("truncated frame header")
    length, kind = HEADER.unpack_from(frame)
    if len(frame) != HEADER.size + length:
        raise CodecError("frame length mismatch")
    return decode_body(kind, frame[HEADER.size :])


# -- batched interactions -----------------------------------------------------


def _interaction_frame_dtype(payload_size: int) -> np.dtype:
    fields = [
        ("length", "<u4"),
        ("type", "u1"),
        ("sender", "<u8"),
        ("dest", "<u8"),
        ("send_ts", "<u8"),
        ("deliver_ts", "<u8"),
        ("seq", "<u8"),
        ("payload_len", "<u4"),
    ]
    if payload_size:
        fields.append(("payload", "u1", (payload_size,)))
    return np.dtype(fields)


def encode_interactions(events: np.ndarray, payload_size: int, payloads=None) -> bytes:
    """Frames for a batch of interactions in one pass; payloads default to zero bytes."""
    dt = _interaction_frame_dtype(payload_size)
    out = np.zeros(len(events), dtype=dt)
    out["length"] = interaction_body_size(payload_size)
    out["type"] = MsgType.INTERACTION
    for name in EVENT_DTYPE.names:
        out[name] = events[name]
    out["payload_len"] = payload_size
    if payloads is not None and payload_size:
        out["payload"] = payloads
    return out.tobytes()


@dataclass
class Bundle:
    """Everything one LP sends one peer during one timestep."""

    events: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=EVENT_DTYPE))
    payload_size: int = 0
    notices: list = field(default_factory=list)
    envelopes: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    grants: list = field(default_factory=list)
    barrier: Barrier | None = None

    def frames(self) -> list[bytes]:
        """Canonical frame sequence (barrier last)."""
        out = []
        raw = encode_interactions(self.events, self.payload_size)
        size = interaction_frame_size(self.payload_size)
        out += [raw[i : i + size] for i in range(0, len(raw), size)]
        for group in (self.notices, self.envelopes, self.candidates, self.grants):
            out += [encode(m) for m in group]
        if self.barrier is not None:
            out.append(encode(self.barrier))
        return out

    def encode(self) -> bytes:
        parts = [encode_interactions(self.events, self.payload_size)]
        for group in (self.notices, self.envelopes, self.candidates, self.grants):
            parts += [encode(m) for m in group]
        if self.barrier is not None:
            parts.append(encode(self.barrier))
        return b"".join(parts)


class StreamDecoder:
    """Incremental decoder: feed bytes, collect bundles terminated by BARRIER frames."""

    def __init__(self):
        self._buf = bytearray()
        self._current = _BundleBuilder()
        self.complete: list[Bundle] = []

    def feed(self, data: bytes) -> None:
        self._buf += data
        buf = self._buf
        off = 0
        n = len(buf)
        while n - off >= HEADER.size:
            length, kind = HEADER.unpack_from(buf, off)
            end = off + HEADER.size + length
            if end > n:
                break
            if kind == MsgType.INTERACTION:
                off = self._interaction_run(buf, off, length, n)
                continue
            msg = decode_body(kind, bytes(buf[off + HEADER.size : end]))
            off = end
            if isinstance(msg, Barrier):
                self.complete.append(self._current.finish(msg))
                self._current = _BundleBuilder()
            else:
                self._current.add(msg)
        del buf[:off]

    def _interaction_run(self, buf, off, length, n) -> int:
        if length < INTERACTION_OVERHEAD:
            raise CodecError("interaction body too short")
        psize = length - INTERACTION_OVERHEAD
        dt = _interaction_frame_dtype(psize)
        count = (n - off) // dt.itemsize
        arr = np.frombuffer(bytes(buf[off : off + count * dt.itemsize]), dtype=dt)
        ok = (arr["length"] == length) & (arr["type"] == MsgType.INTERACTION)
        bad = np.flatnonzero(~ok)
        run = int(bad[0]) if len(bad) else count
        arr = arr[:run]
        if np.any(arr["payload_len"] != psize):
            raise CodecError("interaction payload length mismatch")
        self._current.add_events(arr, psize)
        return off + run * dt.itemsize


class _BundleBuilder:
    def __init__(self):
        self.bundle = Bundle()
        self._events = []
        self._psize = None

    def add_events(self, arr, psize):
        if self._psize is not None and psize != self._psize:
            raise CodecError("mixed interaction payload sizes in one step")
        self._psize = psize
        ev = np.empty(len(arr), dtype=EVENT_DTYPE)
        for name in EVENT_DTYPE.names:
            ev[name] = arr[name]
        self._events.append(ev)

    def add(self, msg):
        b = self.bundle
        if isinstance(msg, Notice):
            b.notices.append(msg)
        elif isinstance(msg, MigrationEnvelope):
            b.envelopes.append(msg)
        elif isinstance(msg, CandidateSummary):
            b.candidates.append(msg)
        elif isinstance(msg, GrantDecision):
            b.grants.append(msg)
        else:
            raise CodecError(f"unexpected message {msg!r}")

    def finish(self, barrier: Barrier) -> Bundle:
        b = self.bundle
        if self._events:
            b.events = np.concatenate(self._events)
            b.payload_size = self._psize
        b.barrier = barrier
        return b
