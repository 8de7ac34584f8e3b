"""Full-mesh TCP transport, one process per LP.

The roster file lists one LP per line as ``lp_id host port``; ids must be 0..n-1.
Each LP listens on its own port, connects to every lower id and accepts every higher
one. A connector introduces itself with its LP id (u32 LE). After that each direction
carries plain frames; a BARRIER frame closes one timestep's bundle.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time

from ..core import ProtocolError
from .codec import Bundle, CodecError, StreamDecoder

_HELLO = struct.Struct("<I")
_CLOSED = object()


def parse_roster(text: str) -> dict[int, tuple[str, int]]:
    roster = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"roster line {lineno}: expected 'lp_id host port'")
        try:
            lp, port = int(parts[0]), int(parts[2])
        except ValueError:
            raise ValueError(f"roster line {lineno}: bad lp id or port") from None
        if lp in roster:
            raise ValueError(f"roster line {lineno}: duplicate LP {lp}")
        roster[lp] = (parts[1], port)
    if sorted(roster) != list(range(len(roster))):
        raise ValueError("roster LP ids must be 0..n-1")
    return roster


def load_roster(path: str) -> dict[int, tuple[str, int]]:
    with open(path) as fh:
        return parse_roster(fh.read())


def free_ports(n: int, host: str = "127.0.0.1") -> list[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed during handshake")
        buf += chunk
    return buf


class TcpTransport:
    def __init__(
        self, lp_id: int, roster: dict[int, tuple[str, int]], timeout: float = 60.0, log_frames: bool = False
    ):
        if lp_id not in roster:
            raise ValueError(f"LP {lp_id} is not in the roster")
        self.lp_id = lp_id
        self.roster = roster
        self.timeout = timeout
        self.peers = sorted(p for p in roster if p != lp_id)
        self._socks: dict[int, socket.socket] = {}
        self._queues = {p: queue.Queue() for p in self.peers}
        self._readers = []
        self.log_frames = log_frames
        self.frame_log: list[tuple[int, int, int, list[bytes]]] = []
        self._connect()

    def _connect(self) -> None:
        host, port = self.roster[self.lp_id]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, port))
        listener.listen(len(self.roster))
        deadline = time.monotonic() + self.timeout
        try:
            for p in self.peers:
                if p > self.lp_id:
                    continue
                while True:
                    try:
                        s = socket.create_connection(self.roster[p], timeout=self.timeout)
                        break
                    except OSError:
                        if time.monotonic() > deadline:
                            raise ProtocolError(f"LP {self.lp_id}: cannot reach LP {p}") from None
                        time.sleep(0.05)
                s.sendall(_HELLO.pack(self.lp_id))
                self._socks[p] = s
            listener.settimeout(self.timeout)
            while len(self._socks) < len(self.peers):
                try:
                    s, _ = listener.accept()
                except socket.timeout:
                    raise ProtocolError(f"LP {self.lp_id}: peers did not connect in time") from None
                s.settimeout(self.timeout)
                peer, = _HELLO.unpack(_recv_exact(s, _HELLO.size))
                if peer not in self._queues or peer in self._socks:
                    raise ProtocolError(f"LP {self.lp_id}: unexpected hello from {peer}")
                self._socks[peer] = s
        finally:
            listener.close()
        for p, s in self._socks.items():
            s.settimeout(None)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            th = threading.Thread(target=self._reader, args=(p, s), daemon=True)
            th.start()
            self._readers.append(th)

    def _reader(self, peer: int, sock: socket.socket) -> None:
        q = self._queues[peer]
        dec = StreamDecoder()
        try:
            while True:
                data = sock.recv(1 << 20)
                if not data:
                    break
                dec.feed(data)
                for b in dec.complete:
                    q.put(b)
                dec.complete.clear()
        except (OSError, CodecError) as exc:
            q.put(exc)
        q.put(_CLOSED)

    def send(self, dst: int, bundle: Bundle) -> None:
        if self.log_frames:
            self.frame_log.append((bundle.barrier.timestep, self.lp_id, dst, bundle.frames()))
        try:
            self._socks[dst].sendall(bundle.encode())
        except OSError as exc:
            raise ProtocolError(f"LP {self.lp_id}: send to LP {dst} failed: {exc}") from None

    def recv_all_for_step(self, t: int) -> list[Bundle]:
        """Block until every peer's bundle of timestep t-1 is in."""
        out = []
        for p in self.peers:
            try:
                item = self._queues[p].get(timeout=self.timeout)
            except queue.Empty:
                raise ProtocolError(f"LP {self.lp_id}: timed out waiting for LP {p} at {t}") from None
            if item is _CLOSED:
                raise ProtocolError(f"LP {self.lp_id}: LP {p} vanished before timestep {t}")
            if isinstance(item, Exception):
                raise ProtocolError(f"LP {self.lp_id}: stream from LP {p} broke: {item}")
            if item.barrier.lp_id != p or item.barrier.timestep != t - 1:
                raise ProtocolError(
                    f"LP {self.lp_id}: barrier ({item.barrier.lp_id}, {item.barrier.timestep})"
                    f" from LP {p} at timestep {t}"
                )
            out.append(item)
        return out

    def close(self) -> None:
        for s in self._socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
