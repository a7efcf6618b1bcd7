"""Versioned world-state stores: one interface, two backends.

``MemoryStateStore`` is a plain hash table: no durability of its own, the
fast path for the critical validate-and-commit loop.  Its persistence story
is delegated to block storage and to explicit ``snapshot()`` calls.

``DurableStateStore`` approximates the cost profile of an on-disk KV store:
every applied write is framed and appended to a write log with its own
write syscall, the log is fsynced once per block commit (``sync()``), and
an in-memory index serves reads.  Reopening a store replays the log.

Concurrency contract: many readers, exactly one writer.  Readers during a
write may see pre- or post-write state per key but never a torn entry
(entries are immutable tuples swapped in atomically).
"""

from __future__ import annotations

import os
import struct
from typing import Iterable, NamedTuple

from .errors import MalformedFrame, StorageFailure
from .wire import Version

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_VER = struct.Struct("<QI")


class StateEntry(NamedTuple):
    value: bytes
    version: Version


def _encode_entry(key: str, entry: StateEntry) -> bytes:
    kb = key.encode()
    return b"".join(
        (
            _U32.pack(len(kb)),
            kb,
            _U32.pack(len(entry.value)),
            entry.value,
            _VER.pack(entry.version[0], entry.version[1]),
        )
    )


def _decode_entries(buf: bytes, count: int, pos: int):
    n = len(buf)
    for _ in range(count):
        if pos + 4 > n:
            raise MalformedFrame("truncated snapshot entry")
        (klen,) = _U32.unpack_from(buf, pos)
        pos += 4
        if pos + klen + 4 > n:
            raise MalformedFrame("truncated snapshot key")
        key = buf[pos : pos + klen].decode()
        pos += klen
        (vlen,) = _U32.unpack_from(buf, pos)
        pos += 4
        if pos + vlen + 12 > n:
            raise MalformedFrame("truncated snapshot value")
        value = buf[pos : pos + vlen]
        pos += vlen
        block_num, tx_num = _VER.unpack_from(buf, pos)
        pos += 12
        yield key, StateEntry(value, Version(block_num, tx_num))
    if pos != n:
        raise MalformedFrame("trailing bytes after snapshot entries")


class MemoryStateStore:
    """World state in a dict; the Opt P-I backend."""

    backend_name = "memory"

    def __init__(self):
        self._map: dict[str, StateEntry] = {}

    def get(self, key: str) -> StateEntry | None:
        return self._map.get(key)

    def apply_writes(self, writes: Iterable[tuple[str, bytes]], version: Version) -> None:
        m = self._map
        for key, value in writes:
            m[key] = StateEntry(value, version)

    def sync(self) -> None:
        pass

    def snapshot(self) -> bytes:
        parts = [_U64.pack(len(self._map))]
        for key in sorted(self._map):
            parts.append(_encode_entry(key, self._map[key]))
        return b"".join(parts)

    def restore(self, buf: bytes) -> None:
        if len(buf) < 8:
            raise MalformedFrame("snapshot shorter than its header")
        (count,) = _U64.unpack_from(buf, 0)
        entries = dict(_decode_entries(buf, count, 8))
        self._map = entries

    def items(self):
        return self._map.items()

    def __len__(self):
        return len(self._map)

    def close(self) -> None:
        pass


class DurableStateStore(MemoryStateStore):
    """Write-log-backed store; the baseline backend."""

    backend_name = "durable"

    def __init__(self, path: str):
        super().__init__()
        self._path = path
        try:
            self._fd = os.open(path, os.O_CREAT | os.O_RDWR | os.O_APPEND, 0o644)
            self._replay()
        except OSError as exc:
            raise StorageFailure(f"cannot open state log {path}: {exc}") from exc

    def _replay(self) -> None:
        with open(self._path, "rb") as fh:
            buf = fh.read()
        pos = 0
        n = len(buf)
        valid_end = 0
        while pos < n:
            try:
                if pos + 4 > n:
                    raise MalformedFrame("tail")
                (klen,) = _U32.unpack_from(buf, pos)
                end = pos + 4 + klen + 4
                if end > n:
                    raise MalformedFrame("tail")
                key = buf[pos + 4 : pos + 4 + klen].decode()
                (vlen,) = _U32.unpack_from(buf, pos + 4 + klen)
                end += vlen + 12
                if end > n:
                    raise MalformedFrame("tail")
                value = buf[pos + 8 + klen : pos + 8 + klen + vlen]
                block_num, tx_num = _VER.unpack_from(buf, end - 12)
            except (MalformedFrame, UnicodeDecodeError):
                break  # torn tail from a crash; drop it
            self._map[key] = StateEntry(value, Version(block_num, tx_num))
            pos = end
            valid_end = end
        if valid_end != n:
            os.ftruncate(self._fd, valid_end)

    def apply_writes(self, writes, version: Version) -> None:
        m = self._map
        try:
            for key, value in writes:
                entry = StateEntry(value, version)
                os.write(self._fd, _encode_entry(key, entry))
                m[key] = entry
        except OSError as exc:
            raise StorageFailure(f"state log append failed: {exc}") from exc

    def sync(self) -> None:
        try:
            os.fsync(self._fd)
        except OSError as exc:
            raise StorageFailure(f"state log fsync failed: {exc}") from exc

    def restore(self, buf: bytes) -> None:
        super().restore(buf)
        try:
            os.ftruncate(self._fd, 0)
            for key in sorted(self._map):
                os.write(self._fd, _encode_entry(key, self._map[key]))
            os.fsync(self._fd)
        except OSError as exc:
            raise StorageFailure(f"state log rewrite failed: {exc}") from exc

    def close(self) -> None:
        try:
            os.close(self._fd)
        except OSError:
            pass


def make_state_store(backend: str, path: str | None = None):
    if backend == "memory":
        return MemoryStateStore()
    if backend == "durable":
        if not path:
            raise ValueError("durable backend needs a log path")
        return DurableStateStore(path)
    raise ValueError(f"unknown state backend {backend!r}")
