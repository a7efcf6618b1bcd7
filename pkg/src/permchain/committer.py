"""Committing peer: concurrent validation pipeline, sequential MVCC commit.

Stage layout (opt_p2 on)::

    intake (1 thread): recv -> verify_block -> admit in block order
    shepherds (N threads): one block each, tx checks fanned onto the
        shared validator pool
    commit (1 thread): MVCC + state writes, strictly in block order
    fanout (1 thread): validated blocks to endorsers and the block store

With opt_p2 off every stage runs inline on the intake thread, one block in
flight, and block persistence happens inside the commit step (the
transaction-validation worker pool is still used within a block).

The unmarshal cache (opt_p3) is a cyclic buffer with one slot per pipeline
position.  Entries are add-only; a slot is recycled only between commit of
its old block and admission of the next, so readers never need locks.
Duplicate concurrent decodes are allowed: the results are byte-equal and
the last write wins.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass
from typing import NamedTuple

from . import protocol as p
from .errors import ChannelClosed, RecvTimeout, StorageFailure
from .identity import Role, check_policy
from .ledger import Block, ValidationFlag, decode_block, encode_block, genesis_block, link_check
from .wire import (
    GENESIS_VERSION,
    Layer,
    Version,
    decode_endorsements,
    decode_envelope,
    decode_header,
    decode_payload,
    decode_rwset,
    encode_block_header,
)

logger = logging.getLogger(__name__)


def default_pool_size() -> tuple[int, int]:
    """Fallback sizing: at least twice the hardware threads in total."""
    hw = os.cpu_count() or 1
    return max(2, hw), max(2, hw)


@dataclass
class PipelineConfig:
    block_shepherds: int = 31
    tx_validators: int = 25
    opt_p1: bool = False  # in-memory hash-table state
    opt_p2: bool = False  # parallel pipeline + storage/endorsement offload
    opt_p3: bool = False  # unmarshal cache

    def __post_init__(self):
        if self.block_shepherds < 1 or self.tx_validators < 1:
            raise ValueError("pipeline worker counts must be >= 1")


class CommitResult(NamedTuple):
    block_number: int
    flags: tuple
    commit_time: float


class _Slot:
    __slots__ = ("block_number", "block", "layers", "free")

    def __init__(self):
        self.block_number = -1
        self.block = None
        self.layers = {}
        self.free = threading.Event()
        self.free.set()


class UnmarshalCache:
    """Cyclic buffer of decoded block layers, sized to the pipeline depth."""

    def __init__(self, depth: int):
        self.depth = depth
        self._slots = [_Slot() for _ in range(depth)]

    def admit(self, block: Block) -> None:
        """Bind a slot to `block`; waits until the previous occupant left.

        Must be called in strictly increasing block-number order by a single
        thread; this is also the pipeline's admission control.
        """
        slot = self._slots[block.number % self.depth]
        slot.free.wait()
        slot.free.clear()
        slot.layers = {}
        slot.block = block
        slot.block_number = block.number

    def release(self, block_number: int) -> None:
        slot = self._slots[block_number % self.depth]
        slot.block_number = -1
        slot.block = None
        slot.layers = {}
        slot.free.set()

    def slot_for(self, block_number: int) -> _Slot:
        slot = self._slots[block_number % self.depth]
        if slot.block_number != block_number:
            raise RuntimeError(
                f"cache slot holds block {slot.block_number}, wanted {block_number}"
            )
        return slot

    def get(self, block_number: int, tx_index: int, layer: Layer, decode):
        """Cached decode; add-only, last-write-wins, lock-free for readers."""
        slot = self.slot_for(block_number)
        key = (tx_index, layer)
        value = slot.layers.get(key)
        if value is None:
            value = decode()
            slot.layers[key] = value
        return value


class _Latch:
    __slots__ = ("_count", "_lock", "done")

    def __init__(self, count: int):
        self._count = count
        self._lock = threading.Lock()
        self.done = threading.Event()

    def dec(self) -> None:
        with self._lock:
            self._count -= 1
            if self._count == 0:
                self.done.set()


class _WorkerPool:
    """Minimal fixed-size pool; cheaper per task than executor futures."""

    def __init__(self, size: int, name: str):
        self._q: queue.SimpleQueue = queue.SimpleQueue()
        self._threads = []
        for i in range(size):
            t = threading.Thread(target=self._run, name=f"{name}-{i}", daemon=True)
            t.start()
            self._threads.append(t)

    def _run(self) -> None:
        while True:
            task = self._q.get()
            if task is None:
                return
            try:
                task()
            except Exception:
                logger.exception("worker task failed")

    def submit(self, task) -> None:
        self._q.put(task)

    def close(self) -> None:
        for _ in self._threads:
            self._q.put(None)


class Committer:
    def __init__(
        self,
        node_id: str,
        registry,
        network,
        config: PipelineConfig,
        state_store,
        policy=None,
        orderer_id: str = "orderer",
        endorser_ids=(),
        store_id: str | None = None,
        local_store=None,
        channel_id: str = "ch1",
    ):
        self.node_id = node_id
        self.registry = registry
        self.config = config
        self.state = state_store
        self.policy = policy or registry.default_policy()
        self.commit_log: list[CommitResult] = []
        self.latencies: list[float] = []
        self.first_delivery: float | None = None
        self.discarded = 0
        self.fatal: Exception | None = None
        self.cache = UnmarshalCache(config.block_shepherds)
        self._network = network
        self._orderer_id = orderer_id
        self._endorser_ids = list(endorser_ids)
        self._store_id = store_id
        self._local_store = local_store
        self._channel_id = channel_id
        self._last_accepted = genesis_block()
        self._expected = 1
        self._delivery_ts: dict[int, float] = {}
        self._validators = _WorkerPool(config.tx_validators, f"{node_id}-val")
        self._shepherds = _WorkerPool(config.block_shepherds, f"{node_id}-shep") if config.opt_p2 else None
        self._commit_buf: dict[int, tuple[Block, list]] = {}
        self._commit_cond = threading.Condition()
        self._committed_cond = threading.Condition()
        self._fanout_q: queue.SimpleQueue = queue.SimpleQueue()
        self._fanout_channels: dict[str, object] = {}
        self._warned_unread_write = False
        self._threads: list[threading.Thread] = []
        self._stop = False

    # --- lifecycle ---

    def start(self, connect: bool = True) -> None:
        """Start pipeline workers; with `connect`, also pull from the orderer.

        Tests that drive blocks through feed_block() pass connect=False.
        """
        self.start_workers()
        if connect:
            self._spawn(self._intake_loop, f"{self.node_id}-intake")

    def start_workers(self) -> None:
        if self.config.opt_p2 and not self._threads:
            self._spawn(self._commit_loop, f"{self.node_id}-commit")
            self._spawn(self._fanout_loop, f"{self.node_id}-fanout")

    def _spawn(self, fn, name) -> None:
        t = threading.Thread(target=fn, name=name, daemon=True)
        t.start()
        self._threads.append(t)

    def close(self) -> None:
        self._stop = True
        self._validators.close()
        if self._shepherds:
            self._shepherds.close()
        self._fanout_q.put(None)
        with self._commit_cond:
            self._commit_cond.notify_all()
        for ch in self._fanout_channels.values():
            ch.close()
        if self._local_store is not None:
            self._local_store.close()
        self.state.close()

    def _fail(self, exc: Exception) -> None:
        logger.error("committer halted: %s", exc)
        self.fatal = exc
        with self._committed_cond:
            self._committed_cond.notify_all()

    # --- operations ---

    def verify_block(self, block: Block) -> bool:
        """Accept/discard gate: signature, hashes and chain linkage."""
        orderer = self.registry.get(self._orderer_id)
        if orderer is None or orderer.role is not Role.ORDERER:
            return False
        if not block.data_hash_ok():
            return False
        if not self.registry.verify(
            self._orderer_id, encode_block_header(block.header), block.orderer_signature
        ):
            return False
        return link_check(self._last_accepted, block)

    def validate_tx(self, block_number: int, tx_index: int) -> ValidationFlag:
        """Pre-MVCC checks: syntax, envelope signature, endorsement policy."""
        slot = self.cache.slot_for(block_number)
        raw = slot.block.envelopes[tx_index]
        try:
            if self.config.opt_p3:
                env = self.cache.get(
                    block_number, tx_index, Layer.ENVELOPE, lambda: decode_envelope(raw)
                )
                sections = self.cache.get(
                    block_number, tx_index, Layer.PAYLOAD, lambda: decode_payload(env.payload_bytes)
                )
                header = self.cache.get(
                    block_number, tx_index, Layer.HEADER, lambda: decode_header(sections.header_bytes)
                )
                ends = self.cache.get(
                    block_number,
                    tx_index,
                    Layer.ENDORSEMENTS,
                    lambda: decode_endorsements(sections.data_bytes),
                )
            else:
                env = decode_envelope(raw)
                sections = decode_payload(env.payload_bytes)
                header = decode_header(sections.header_bytes)
                ends = decode_endorsements(sections.data_bytes)
        except Exception:
            return ValidationFlag.MALFORMED
        if not header.is_consistent() or header.channel_id != self._channel_id:
            return ValidationFlag.MALFORMED
        creator = self.registry.get(header.creator)
        if creator is None or creator.role is not Role.CLIENT:
            return ValidationFlag.BAD_ENVELOPE_SIG
        if not self.registry.scheme.verify(creator.public_key, env.payload_bytes, env.signature):
            return ValidationFlag.BAD_ENVELOPE_SIG
        if not check_policy(self.registry, self.policy, ends.endorsements, ends.signed_message):
            return ValidationFlag.BAD_ENDORSEMENT
        return ValidationFlag.VALID

    def _tx_rwset(self, block_number: int, tx_index: int, raw: bytes):
        if self.config.opt_p3:
            sections = self.cache.get(
                block_number,
                tx_index,
                Layer.PAYLOAD,
                lambda: decode_payload(decode_envelope(raw).payload_bytes),
            )
            return self.cache.get(
                block_number, tx_index, Layer.RWSET, lambda: decode_rwset(sections.data_bytes)
            )
        sections = decode_payload(decode_envelope(raw).payload_bytes)
        return decode_rwset(sections.data_bytes)

    def mvcc_commit(self, block: Block, pre_flags) -> CommitResult:
        """Read-set version checks and state writes, in block order.

        Called only by the single committing worker.  Writes of earlier
        transactions in the block are visible to later ones.
        """
        state = self.state
        flags = []
        n = block.number
        for i, raw in enumerate(block.envelopes):
            pre = pre_flags[i]
            if pre is not ValidationFlag.VALID:
                flags.append(pre)
                continue
            rwset = self._tx_rwset(n, i, raw)
            ok = True
            for key, version in rwset.reads:
                entry = state.get(key)
                if entry is None:
                    if version != GENESIS_VERSION:
                        ok = False
                        break
                elif entry.version != version:
                    ok = False
                    break
            if not ok:
                flags.append(ValidationFlag.MVCC_CONFLICT)
                continue
            if not self._warned_unread_write:
                read_keys = {k for k, _ in rwset.reads}
                missing = [k for k, _ in rwset.writes if k not in read_keys]
                if missing:
                    self._warned_unread_write = True
                    logger.warning(
                        "write-set keys without matching reads (first: %s); "
                        "version checking covers read sets only",
                        missing[0],
                    )
            state.apply_writes(rwset.writes, Version(n, i))
            flags.append(ValidationFlag.VALID)
        block.flags = flags
        state.sync()
        return CommitResult(n, tuple(flags), time.perf_counter())

    def fan_out(self, block: Block) -> None:
        """Deliver a validated block to every endorser and the block store."""
        targets = list(self._endorser_ids)
        if self._store_id is not None and self.config.opt_p2:
            targets.append(self._store_id)
        if not targets:
            return
        encoded = encode_block(block)
        for target in targets:
            self._send_validated(target, encoded, block.number)

    def _send_validated(self, target: str, encoded: bytes, number: int) -> None:
        delay = 0.05
        for attempt in range(4):
            ch = self._fanout_channels.get(target)
            try:
                if ch is None:
                    ch = self._network.connect(self.node_id, target)
                    self._fanout_channels[target] = ch
                ch.send(p.VALIDATED, encoded)
                return
            except Exception as exc:
                self._fanout_channels.pop(target, None)
                if ch is not None:
                    ch.close()
                logger.warning(
                    "fanout of block %d to %s failed (attempt %d): %s",
                    number, target, attempt + 1, exc,
                )
                time.sleep(delay)
                delay *= 2
        logger.error("giving up delivering block %d to %s; commit stays final", number, target)

    # --- pipeline ---

    def _intake_loop(self) -> None:
        try:
            ch = self._connect_delivery()
            while not self._stop:
                try:
                    msg_type, body = ch.recv(timeout=0.5)
                except RecvTimeout:
                    continue
                except ChannelClosed:
                    return
                if msg_type != p.BLOCK:
                    continue
                try:
                    block = decode_block(body)
                except Exception:
                    self.discarded += 1
                    ch = self._redeliver(ch)
                    continue
                if block.number < self._expected:
                    continue  # stale redelivery, already have it
                if block.number > self._expected or not self.verify_block(block):
                    self.discarded += 1
                    logger.warning(
                        "discarding block %d (expected %d); requesting redelivery",
                        block.number, self._expected,
                    )
                    ch = self._redeliver(ch)
                    continue
                now = time.perf_counter()
                if self.first_delivery is None:
                    self.first_delivery = now
                self._delivery_ts[block.number] = now
                self._last_accepted = block
                self._expected += 1
                self._admit(block)
        except Exception as exc:
            self._fail(exc)

    def _connect_delivery(self):
        ch = self._network.connect(self.node_id, self._orderer_id)
        ch.send(p.DELIVER_REQ, p.pack_deliver_req(self._expected))
        return ch

    def _redeliver(self, old_channel):
        old_channel.close()
        return self._connect_delivery()

    def _admit(self, block: Block) -> None:
        self.cache.admit(block)
        if self.config.opt_p2:
            self._shepherds.submit(lambda: self._shepherd(block))
        else:
            pre_flags = self._validate_block(block)
            result = self.mvcc_commit(block, pre_flags)
            if self._local_store is not None:
                self._local_store.append(block)
            self.fan_out(block)
            self.cache.release(block.number)
            self._record(result)

    def _validate_block(self, block: Block) -> list:
        ntx = len(block.envelopes)
        flags = [None] * ntx
        if ntx == 0:
            return flags
        chunk = max(1, -(-ntx // self.config.tx_validators))
        ranges = [(s, min(s + chunk, ntx)) for s in range(0, ntx, chunk)]
        latch = _Latch(len(ranges))
        n = block.number

        def run_range(start: int, end: int) -> None:
            try:
                for i in range(start, end):
                    flags[i] = self.validate_tx(n, i)
            except Exception:
                logger.exception("validation chunk failed")
                for i in range(start, end):
                    if flags[i] is None:
                        flags[i] = ValidationFlag.MALFORMED
            finally:
                latch.dec()

        for start, end in ranges:
            self._validators.submit(lambda s=start, e=end: run_range(s, e))
        latch.done.wait()
        return flags

    def _shepherd(self, block: Block) -> None:
        try:
            pre_flags = self._validate_block(block)
            with self._commit_cond:
                self._commit_buf[block.number] = (block, pre_flags)
                self._commit_cond.notify_all()
        except Exception as exc:
            self._fail(exc)

    def _commit_loop(self) -> None:
        next_number = 1
        while not self._stop:
            with self._commit_cond:
                self._commit_cond.wait_for(
                    lambda: next_number in self._commit_buf or self._stop, timeout=0.5
                )
                item = self._commit_buf.pop(next_number, None)
            if item is None:
                continue
            block, pre_flags = item
            try:
                result = self.mvcc_commit(block, pre_flags)
            except StorageFailure as exc:
                self._fail(exc)
                return
            self._fanout_q.put(encode_block(block))
            self.cache.release(block.number)
            self._record(result)
            next_number += 1

    def _fanout_loop(self) -> None:
        targets = list(self._endorser_ids)
        if self._store_id is not None:
            targets.append(self._store_id)
        while True:
            encoded = self._fanout_q.get()
            if encoded is None:
                return
            for target in targets:
                self._send_validated(target, encoded, -1)

    def _record(self, result: CommitResult) -> None:
        delivered = self._delivery_ts.pop(result.block_number, None)
        if delivered is not None:
            self.latencies.append(result.commit_time - delivered)
        with self._committed_cond:
            self.commit_log.append(result)
            self._committed_cond.notify_all()

    # --- helpers for harness and tests ---

    def committed_count(self) -> int:
        return len(self.commit_log)

    def wait_committed(self, count: int, timeout: float | None = None) -> bool:
        with self._committed_cond:
            return self._committed_cond.wait_for(
                lambda: len(self.commit_log) >= count or self.fatal is not None, timeout
            ) and self.fatal is None

    @property
    def local_store(self):
        return self._local_store

    def feed_block(self, block: Block) -> bool:
        """Drive the pipeline directly (tests); returns verify_block verdict."""
        if block.number != self._expected or not self.verify_block(block):
            self.discarded += 1
            return False
        now = time.perf_counter()
        if self.first_delivery is None:
            self.first_delivery = now
        self._delivery_ts[block.number] = now
        self._last_accepted = block
        self._expected += 1
        self._admit(block)
        return True
