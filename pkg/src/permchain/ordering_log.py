"""In-process replicated-log stand-in: one total order per channel.

The log runs as its own service reached over the transport, not as a
shortcut inside the orderer, so publishing a full payload costs real wire
traffic compared to publishing a bare transaction ID.  Single node,
crash-stop; replication is out of scope.
"""

from __future__ import annotations

import os
import struct
import threading
from typing import NamedTuple

from . import protocol as p
from .errors import ChannelClosed, LogUnavailable, RecvTimeout

_U32 = struct.Struct("<I")


class LogRecord(NamedTuple):
    offset: int
    payload: bytes


class _ChannelLog:
    def __init__(self, data_path: str | None = None):
        self.records: list[bytes] = []
        self.cond = threading.Condition()
        self._fd = None
        if data_path is not None:
            self._fd = os.open(data_path, os.O_CREAT | os.O_WRONLY | os.O_APPEND, 0o644)

    def append(self, payload: bytes) -> int:
        with self.cond:
            offset = len(self.records)
            if self._fd is not None:
                os.write(self._fd, _U32.pack(len(payload)) + payload)
            self.records.append(payload)
            self.cond.notify_all()
            return offset


class OrderingLog:
    """Core log: dense offsets from 0 per channel, append serialized."""

    def __init__(self, data_dir: str | None = None):
        self._channels: dict[str, _ChannelLog] = {}
        self._lock = threading.Lock()
        self._data_dir = data_dir
        self._failed = False
        if data_dir:
            os.makedirs(data_dir, exist_ok=True)

    def _channel(self, name: str) -> _ChannelLog:
        log = self._channels.get(name)
        if log is None:
            with self._lock:
                log = self._channels.get(name)
                if log is None:
                    path = os.path.join(self._data_dir, f"{name}.log") if self._data_dir else None
                    log = _ChannelLog(path)
                    self._channels[name] = log
        return log

    def fail(self, failed: bool = True) -> None:
        """Fault injection: make publish/read raise LogUnavailable."""
        self._failed = failed

    def publish(self, channel: str, payload: bytes) -> int:
        if self._failed:
            raise LogUnavailable("ordering log marked unavailable")
        return self._channel(channel).append(payload)

    def read(self, channel: str, offset: int, timeout: float | None = None) -> list[LogRecord]:
        """Records at >= offset, blocking until at least one exists."""
        if self._failed:
            raise LogUnavailable("ordering log marked unavailable")
        log = self._channel(channel)
        with log.cond:
            if not log.cond.wait_for(lambda: len(log.records) > offset, timeout):
                return []
            payloads = log.records[offset:]
        return [LogRecord(offset + i, pl) for i, pl in enumerate(payloads)]


class LogService:
    """Serves PUBLISH / SUBSCRIBE conversations for an OrderingLog."""

    def __init__(self, node_id: str, network, log: OrderingLog | None = None):
        self.node_id = node_id
        self.log = log or OrderingLog()
        self._network = network
        self._listener = None
        self._threads: list[threading.Thread] = []
        self._stop = False

    def start(self) -> None:
        self._listener = self._network.listen(self.node_id)
        t = threading.Thread(target=self._accept_loop, name=f"{self.node_id}-accept", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                ch = self._listener.accept()
            except (ChannelClosed, RecvTimeout):
                return
            t = threading.Thread(target=self._serve, args=(ch,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, ch) -> None:
        try:
            while True:
                msg_type, body = ch.recv()
                if msg_type == p.PUBLISH:
                    channel, payload = p.unpack_publish(body)
                    try:
                        offset = self.log.publish(channel, payload)
                    except LogUnavailable:
                        ch.send(p.LOG_ERR, b"")
                        continue
                    ch.send(p.OFFSET, struct.pack("<Q", offset))
                elif msg_type == p.SUBSCRIBE:
                    channel, from_offset = p.unpack_subscribe(body)
                    self._stream(ch, channel, from_offset)
                    return
                else:
                    ch.send(p.LOG_ERR, b"")
        except (ChannelClosed, RecvTimeout):
            pass
        finally:
            ch.close()

    def _stream(self, ch, channel: str, offset: int) -> None:
        while not self._stop:
            try:
                records = self.log.read(channel, offset, timeout=0.2)
            except LogUnavailable:
                ch.send(p.LOG_ERR, b"")
                return
            for rec in records:
                ch.send(p.RECORD, p.pack_record(rec.offset, rec.payload))
                offset = rec.offset + 1

    def close(self) -> None:
        self._stop = True
        if self._listener is not None:
            self._listener.close()


class LogClient:
    """Client-side API; one instance per conversation (not thread-shared)."""

    def __init__(self, network, src_id: str, log_node: str):
        self._network = network
        self._src = src_id
        self._log_node = log_node
        self._pub_channel = None

    def publish(self, channel: str, payload: bytes) -> int:
        if self._pub_channel is None:
            self._pub_channel = self._network.connect(self._src, self._log_node)
        self._pub_channel.send(p.PUBLISH, p.pack_publish(channel, payload))
        msg_type, body = self._pub_channel.recv()
        if msg_type != p.OFFSET:
            raise LogUnavailable("publish rejected by log service")
        return struct.unpack("<Q", body)[0]

    def subscribe(self, channel: str, from_offset: int = 0) -> "Subscription":
        ch = self._network.connect(self._src, self._log_node)
        ch.send(p.SUBSCRIBE, p.pack_subscribe(channel, from_offset))
        return Subscription(ch)

    def close(self) -> None:
        if self._pub_channel is not None:
            self._pub_channel.close()
            self._pub_channel = None


class Subscription:
    """Pull-style view of a log stream."""

    def __init__(self, channel):
        self._channel = channel

    def next(self, timeout: float | None = None) -> LogRecord:
        msg_type, body = self._channel.recv(timeout)
        if msg_type == p.LOG_ERR:
            raise LogUnavailable("log stream reported failure")
        if msg_type != p.RECORD:
            raise LogUnavailable(f"unexpected message type {msg_type} on log stream")
        offset, payload = p.unpack_record(body)
        return LogRecord(offset, payload)

    def __iter__(self):
        while True:
            try:
                yield self.next()
            except ChannelClosed:
                return

    def close(self) -> None:
        self._channel.close()
