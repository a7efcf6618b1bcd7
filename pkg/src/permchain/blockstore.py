"""Append-only block persistence with segment files and flat indices.

Layout under a data directory::

    blocks_NNNN.seg   one per 10,000 blocks; u32-length-framed block records
    blocks.idx        fixed records: u64 number | u32 segment | u64 offset | u32 len
    tx.idx            records: u32 txid_len | txid | u64 block | u32 tx_index
    state.snap        latest world-state snapshot (backup), when provided

Segments are the source of truth: each append fsyncs the segment before
index entries are written, and recovery rescans the segments, truncates a
torn tail, and rewrites both index files if they disagree.
"""

from __future__ import annotations

import logging
import os
import struct
import threading

from . import protocol as p
from .errors import ChannelClosed, GapDetected, NotFound, RecvTimeout, SimulatedCrash, StorageFailure
from .ledger import Block, decode_block, encode_block, genesis_block, link_check
from .wire import decode_envelope, decode_header, decode_payload

logger = logging.getLogger(__name__)

_U32 = struct.Struct("<I")
_BLOCK_IDX = struct.Struct("<QIQI")
_TX_IDX_TAIL = struct.Struct("<QI")

SEGMENT_BLOCKS = 10_000


class BlockStore:
    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        self.crash_point: str | None = None  # test hook: "torn_segment" | "after_segment"
        os.makedirs(data_dir, exist_ok=True)
        self._lock = threading.Lock()
        self._block_index: list[tuple[int, int, int]] = []  # number -> (seg, off, len)
        self._tx_index: dict[str, tuple[int, int]] = {}
        self._seg_fds: dict[int, int] = {}
        self._recover()
        if not self._block_index:
            self.append(genesis_block())

    # --- files ---

    def _seg_path(self, seg: int) -> str:
        return os.path.join(self.data_dir, f"blocks_{seg:04d}.seg")

    def _seg_fd(self, seg: int) -> int:
        fd = self._seg_fds.get(seg)
        if fd is None:
            fd = os.open(self._seg_path(seg), os.O_CREAT | os.O_RDWR, 0o644)
            self._seg_fds[seg] = fd
        return fd

    def _recover(self) -> None:
        segs = sorted(
            int(name[7:11])
            for name in os.listdir(self.data_dir)
            if name.startswith("blocks_") and name.endswith(".seg")
        )
        number = 0
        for seg in segs:
            path = self._seg_path(seg)
            with open(path, "rb") as fh:
                buf = fh.read()
            pos = 0
            valid_end = 0
            while pos + 4 <= len(buf):
                (rec_len,) = _U32.unpack_from(buf, pos)
                end = pos + 4 + rec_len
                if end > len(buf):
                    break  # torn tail
                record = buf[pos + 4 : end]
                try:
                    block = decode_block(record)
                except Exception:
                    break
                if block.number != number:
                    break
                self._block_index.append((seg, pos + 4, rec_len))
                self._index_txs(block)
                number += 1
                pos = end
                valid_end = end
            if valid_end != len(buf):
                with open(path, "r+b") as fh:
                    fh.truncate(valid_end)
                break  # anything after a torn segment is unreachable
        self._rewrite_index_files()

    def _index_txs(self, block: Block) -> None:
        for i, raw in enumerate(block.envelopes):
            try:
                env = decode_envelope(raw)
                header = decode_header(decode_payload(env.payload_bytes).header_bytes)
            except Exception:
                continue  # malformed transactions stay in the block, unindexed
            self._tx_index[header.tx_id] = (block.number, i)

    def _rewrite_index_files(self) -> None:
        with open(os.path.join(self.data_dir, "blocks.idx"), "wb") as fh:
            for number, (seg, off, length) in enumerate(self._block_index):
                fh.write(_BLOCK_IDX.pack(number, seg, off, length))
        with open(os.path.join(self.data_dir, "tx.idx"), "wb") as fh:
            for tx_id, (number, idx) in self._tx_index.items():
                tid = tx_id.encode()
                fh.write(_U32.pack(len(tid)) + tid + _TX_IDX_TAIL.pack(number, idx))

    def _append_index_entries(self, block: Block, seg: int, off: int, length: int) -> None:
        with open(os.path.join(self.data_dir, "blocks.idx"), "ab") as fh:
            fh.write(_BLOCK_IDX.pack(block.number, seg, off, length))
        entries = []
        for i, raw in enumerate(block.envelopes):
            try:
                env = decode_envelope(raw)
                header = decode_header(decode_payload(env.payload_bytes).header_bytes)
            except Exception:
                continue
            self._tx_index[header.tx_id] = (block.number, i)
            tid = header.tx_id.encode()
            entries.append(_U32.pack(len(tid)) + tid + _TX_IDX_TAIL.pack(block.number, i))
        if entries:
            with open(os.path.join(self.data_dir, "tx.idx"), "ab") as fh:
                fh.write(b"".join(entries))

    # --- operations ---

    def height(self) -> int:
        """Number of stored blocks (genesis included)."""
        return len(self._block_index)

    def append(self, block: Block) -> None:
        with self._lock:
            expected = len(self._block_index)
            if block.number != expected:
                raise GapDetected(expected, block.number)
            record = encode_block(block)
            seg = block.number // SEGMENT_BLOCKS
            fd = self._seg_fd(seg)
            try:
                off = os.lseek(fd, 0, os.SEEK_END)
                framed = _U32.pack(len(record)) + record
                if self.crash_point == "torn_segment":
                    os.write(fd, framed[: max(1, len(framed) // 2)])
                    raise SimulatedCrash("torn segment write")
                os.write(fd, framed)
                os.fsync(fd)
            except SimulatedCrash:
                raise
            except OSError as exc:
                raise StorageFailure(f"segment append failed: {exc}") from exc
            if self.crash_point == "after_segment":
                raise SimulatedCrash("lost index update")
            self._block_index.append((seg, off + 4, len(record)))
            self._append_index_entries(block, seg, off + 4, len(record))

    def get_block(self, number: int) -> Block:
        try:
            seg, off, length = self._block_index[number]
        except IndexError:
            raise NotFound(f"block {number}") from None
        fd = self._seg_fd(seg)
        data = os.pread(fd, length, off)
        if len(data) != length:
            raise StorageFailure(f"short read for block {number}")
        return decode_block(data)

    def get_block_bytes(self, number: int) -> bytes:
        try:
            seg, off, length = self._block_index[number]
        except IndexError:
            raise NotFound(f"block {number}") from None
        return os.pread(self._seg_fd(seg), length, off)

    def get_tx(self, tx_id: str) -> tuple[int, int]:
        try:
            return self._tx_index[tx_id]
        except KeyError:
            raise NotFound(f"tx {tx_id}") from None

    def put_snapshot(self, snapshot: bytes) -> None:
        """World-state backup alongside the chain."""
        path = os.path.join(self.data_dir, "state.snap")
        with open(path, "wb") as fh:
            fh.write(snapshot)
            fh.flush()
            os.fsync(fh.fileno())

    def verify_chain(self) -> bool:
        """Full scan: every stored link and data hash must check out."""
        prev = None
        for number in range(self.height()):
            block = self.get_block(number)
            if not block.data_hash_ok():
                return False
            if prev is not None and not link_check(prev, block):
                return False
            prev = block
        return True

    def close(self) -> None:
        for fd in self._seg_fds.values():
            try:
                os.close(fd)
            except OSError:
                pass
        self._seg_fds.clear()


class BlockStoreService:
    """Transport wrapper: VALIDATED intake plus block/tx queries."""

    def __init__(self, node_id: str, network, store: BlockStore):
        self.node_id = node_id
        self.store = store
        self.fatal: Exception | None = None
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
            while not self._stop:
                msg_type, body = ch.recv()
                if msg_type == p.VALIDATED:
                    block = decode_block(body)
                    if block.number < self.store.height():
                        continue  # redelivery of an already stored block
                    self.store.append(block)
                elif msg_type == p.GETBLOCK:
                    number = struct.unpack("<Q", body)[0]
                    try:
                        ch.send(p.BLOCK_RESP, self.store.get_block_bytes(number))
                    except NotFound:
                        ch.send(p.STORE_ERR, struct.pack("<H", p.STORE_ERR_NOTFOUND))
                elif msg_type == p.GETTX:
                    tx_id = p.unpack_gettx(body)
                    try:
                        number, idx = self.store.get_tx(tx_id)
                        ch.send(p.TX_RESP, p.pack_tx_resp(number, idx))
                    except NotFound:
                        ch.send(p.STORE_ERR, struct.pack("<H", p.STORE_ERR_NOTFOUND))
                elif msg_type == p.SNAPSHOT_PUT:
                    self.store.put_snapshot(body)
                    ch.send(p.SNAPSHOT_OK, b"")
                else:
                    logger.warning("unexpected message type %d at block store", msg_type)
        except (ChannelClosed, RecvTimeout):
            pass
        except GapDetected as exc:
            logger.error("block store gap: %s", exc)
            self.fatal = exc
        except Exception as exc:
            logger.exception("block store connection failed")
            self.fatal = exc
        finally:
            ch.close()

    def close(self) -> None:
        self._stop = True
        if self._listener is not None:
            self._listener.close()
        self.store.close()
