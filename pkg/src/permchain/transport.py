"""Framed, ordered, reliable channels between nodes.

Two interchangeable modes with identical message-level behavior:

* in-process: a hub of queues; frames are still materialized as bytes so a
  message costs real copying proportional to its size.
* TCP: one socket per channel, loopback or real network.

Frame layout: ``u16 msg_type | u32 body_len | body``, little-endian.

A channel carries one conversation: one logical sender and one logical
receiver per side (an internal lock keeps frames atomic if a service fans
acks back from worker threads).  Nodes open as many channels as they need
for parallel conversations.

Egress pacing: a node may be given an emulated link rate (token bucket over
all its channels), standing in for the finite network of a real deployment.
Without it, an in-process hop costs the same for a 64-byte ID as for a 4 KiB
envelope, and payload-size effects vanish at desk scale.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time

from .errors import ChannelClosed, PeerUnreachable, RecvTimeout

_HDR = struct.Struct("<HI")
MAX_BODY = 1 << 30


class Pacer:
    """Token bucket serializing a node's egress at an emulated bit rate."""

    __slots__ = ("_rate", "_free_at", "_lock")

    def __init__(self, bits_per_sec: float):
        self._rate = float(bits_per_sec)
        self._free_at = 0.0
        self._lock = threading.Lock()

    def debit(self, nbytes: int) -> None:
        wire_time = nbytes * 8.0 / self._rate
        with self._lock:
            now = time.perf_counter()
            start = self._free_at if self._free_at > now else now
            self._free_at = start + wire_time
            wait = self._free_at - now
        # Sleep outside the lock; sub-200us waits are absorbed by later sends.
        if wait > 0.0002:
            time.sleep(wait)


class _ClosedMarker:
    pass


_CLOSED = _ClosedMarker()


class InProcChannel:
    """One end of an in-process duplex channel."""

    def __init__(self, send_q, recv_q, pacer=None):
        self._send_q = send_q
        self._recv_q = recv_q
        self._pacer = pacer
        self._send_lock = threading.Lock()
        self._closed = False
        self._peer_closed = False

    def send(self, msg_type: int, body: bytes) -> None:
        if self._closed or self._peer_closed:
            raise ChannelClosed("send on closed channel")
        frame = _HDR.pack(msg_type, len(body)) + body
        if self._pacer is not None:
            self._pacer.debit(len(frame))
        with self._send_lock:
            if self._closed:
                raise ChannelClosed("send on closed channel")
            self._send_q.put(frame)

    def recv(self, timeout: float | None = None) -> tuple[int, bytes]:
        if self._peer_closed:
            raise ChannelClosed("peer closed")
        try:
            frame = self._recv_q.get(timeout=timeout)
        except queue.Empty:
            raise RecvTimeout(f"no message within {timeout}s") from None
        if frame is _CLOSED:
            self._peer_closed = True
            raise ChannelClosed("peer closed")
        msg_type, _ = _HDR.unpack_from(frame)
        return msg_type, frame[_HDR.size :]

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._send_q.put(_CLOSED)


class TcpChannel:
    """One end of a TCP channel; framing identical to in-process mode."""

    def __init__(self, sock: socket.socket, pacer=None):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._pacer = pacer
        self._send_lock = threading.Lock()
        self._recv_buf = b""
        self._closed = False

    def send(self, msg_type: int, body: bytes) -> None:
        frame = _HDR.pack(msg_type, len(body)) + body
        if self._pacer is not None:
            self._pacer.debit(len(frame))
        try:
            with self._send_lock:
                self._sock.sendall(frame)
        except OSError as exc:
            raise ChannelClosed(f"send failed: {exc}") from exc

    def _fill(self, need: int, timeout: float | None) -> None:
        # Timeout applies only while the buffer is empty; once a frame has
        # started arriving we read it to completion to keep framing intact.
        first = True
        while len(self._recv_buf) < need:
            self._sock.settimeout(timeout if (first and not self._recv_buf) else None)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise RecvTimeout(f"no message within {timeout}s") from None
            except OSError as exc:
                raise ChannelClosed(f"recv failed: {exc}") from exc
            finally:
                self._sock.settimeout(None)
            if not chunk:
                raise ChannelClosed("peer closed")
            self._recv_buf += chunk
            first = False

    def recv(self, timeout: float | None = None) -> tuple[int, bytes]:
        if self._closed:
            raise ChannelClosed("channel closed")
        self._fill(_HDR.size, timeout)
        msg_type, body_len = _HDR.unpack_from(self._recv_buf)
        if body_len > MAX_BODY:
            raise ChannelClosed(f"oversized frame ({body_len} bytes)")
        total = _HDR.size + body_len
        self._fill(total, None)
        body = self._recv_buf[_HDR.size : total]
        self._recv_buf = self._recv_buf[total:]
        return msg_type, body

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()


class InProcListener:
    def __init__(self):
        self._pending = queue.Queue()
        self._open = True

    def accept(self, timeout: float | None = None):
        try:
            ch = self._pending.get(timeout=timeout)
        except queue.Empty:
            raise RecvTimeout("no incoming connection") from None
        if ch is None:
            raise ChannelClosed("listener closed")
        return ch

    def close(self) -> None:
        self._open = False
        self._pending.put(None)


class InProcNetwork:
    """Hub connecting all in-process nodes."""

    mode = "inproc"

    def __init__(self):
        self._listeners: dict[str, InProcListener] = {}
        self._pacers: dict[str, Pacer] = {}
        self._lock = threading.Lock()

    def set_bandwidth(self, node_id: str, mbps: float | None) -> None:
        if mbps:
            self._pacers[node_id] = Pacer(mbps * 1e6)

    def listen(self, node_id: str) -> InProcListener:
        with self._lock:
            listener = InProcListener()
            self._listeners[node_id] = listener
            return listener

    def connect(self, src_id: str, dst_id: str):
        listener = self._listeners.get(dst_id)
        if listener is None or not listener._open:
            raise PeerUnreachable(f"{dst_id} is not listening")
        a_to_b: queue.SimpleQueue = queue.SimpleQueue()
        b_to_a: queue.SimpleQueue = queue.SimpleQueue()
        ours = InProcChannel(a_to_b, b_to_a, self._pacers.get(src_id))
        theirs = InProcChannel(b_to_a, a_to_b, self._pacers.get(dst_id))
        listener._pending.put(theirs)
        return ours

    def close(self) -> None:
        for listener in self._listeners.values():
            listener.close()


class TcpListener:
    def __init__(self, sock: socket.socket, pacer=None):
        self._sock = sock
        self._pacer = pacer
        self.address = sock.getsockname()

    def accept(self, timeout: float | None = None):
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise RecvTimeout("no incoming connection") from None
        except OSError as exc:
            raise ChannelClosed(f"listener closed: {exc}") from exc
        return TcpChannel(conn, self._pacer)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class TcpNetwork:
    """Node addressing over real sockets; addresses from the topology."""

    mode = "tcp"

    def __init__(self, addresses: dict[str, tuple[str, int]] | None = None):
        self._addresses = dict(addresses or {})
        self._pacers: dict[str, Pacer] = {}
        self._lock = threading.Lock()

    def set_bandwidth(self, node_id: str, mbps: float | None) -> None:
        if mbps:
            self._pacers[node_id] = Pacer(mbps * 1e6)

    def listen(self, node_id: str) -> TcpListener:
        host, port = self._addresses.get(node_id, ("127.0.0.1", 0))
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            raise PeerUnreachable(f"cannot bind {host}:{port}: {exc}") from exc
        sock.listen(128)
        listener = TcpListener(sock, self._pacers.get(node_id))
        with self._lock:
            self._addresses[node_id] = listener.address
        return listener

    def connect(self, src_id: str, dst_id: str):
        with self._lock:
            addr = self._addresses.get(dst_id)
        if addr is None:
            raise PeerUnreachable(f"no address for {dst_id}")
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            sock.connect(addr)
        except OSError as exc:
            sock.close()
            raise PeerUnreachable(f"cannot reach {dst_id} at {addr}: {exc}") from exc
        return TcpChannel(sock, self._pacers.get(src_id))

    def close(self) -> None:
        pass


def make_network(mode: str, addresses=None):
    if mode == "inproc":
        return InProcNetwork()
    if mode == "tcp":
        return TcpNetwork(addresses)
    raise ValueError(f"unknown transport mode {mode!r}")
