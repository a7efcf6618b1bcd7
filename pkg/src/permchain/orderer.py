"""Ordering node: intake of endorsed envelopes, total ordering, block cutting.

Intake publishes each accepted submission to the ordering log and acks the
client only once an offset is assigned.  With ID-only ordering (opt_o1) the
envelope stays in a local payload table and just the 64-char transaction id
travels to the log; the envelope is reattached when its id comes back.
With pipelined intake (opt_o2) up to ``intake_pool`` submissions progress
concurrently, otherwise intake is strictly one at a time.

A single assembler consumes the log stream, cuts blocks by count or
timeout, signs them, and retains them for any number of delivery streams
(which is also what makes redelivery requests trivial to serve).
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field

from . import protocol as p
from .errors import ChannelClosed, RecvTimeout, UnknownTxId
from .ledger import build_block, genesis_block
from .ordering_log import LogClient
from .wire import decode_envelope, decode_header, decode_payload

logger = logging.getLogger(__name__)

TXID_LEN = 64


def default_intake_pool() -> int:
    return 2 * (os.cpu_count() or 1)


@dataclass
class OrdererConfig:
    opt_o1: bool = False
    opt_o2: bool = False
    max_block_txs: int = 100
    block_timeout: float = 0.1
    intake_pool: int = field(default_factory=default_intake_pool)
    channel_id: str = "ch1"

    def __post_init__(self):
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be >= 1")
        if self.intake_pool < 1:
            raise ValueError("intake_pool must be >= 1")


class PayloadTable:
    """tx_id -> envelope bytes, pending between intake and reassembly."""

    def __init__(self):
        self._map: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def insert_if_absent(self, tx_id: str, envelope: bytes) -> bool:
        with self._lock:
            if tx_id in self._map:
                return False
            self._map[tx_id] = envelope
            return True

    def pop(self, tx_id: str) -> bytes | None:
        with self._lock:
            return self._map.pop(tx_id, None)

    def __len__(self):
        return len(self._map)


class Orderer:
    def __init__(self, node_id, registry, network, signing_key, config=None, log_node="log"):
        self.node_id = node_id
        self.registry = registry
        self.config = config or OrdererConfig()
        self.fatal: Exception | None = None
        self._network = network
        self._scheme = registry.scheme
        self._signing_key = signing_key
        self._log_node = log_node
        self._table = PayloadTable()
        self._intake_lock = threading.Lock()  # serializes intake when opt_o2 is off
        self._work: queue.SimpleQueue = queue.SimpleQueue()
        self._local = threading.local()
        self._blocks = [genesis_block()]
        self._blocks_cond = threading.Condition()
        self._listener = None
        self._threads: list[threading.Thread] = []
        self._stop = False
        self.accepted = 0
        self.rejected = 0

    # --- lifecycle ---

    def start(self) -> None:
        self._listener = self._network.listen(self.node_id)
        self._spawn(self._accept_loop, f"{self.node_id}-accept")
        self._spawn(self._assemble_loop, f"{self.node_id}-assemble")
        if self.config.opt_o2:
            for i in range(self.config.intake_pool):
                self._spawn(self._intake_worker, f"{self.node_id}-intake-{i}")

    def _spawn(self, fn, name) -> None:
        t = threading.Thread(target=fn, name=name, daemon=True)
        t.start()
        self._threads.append(t)

    def close(self) -> None:
        self._stop = True
        if self._listener is not None:
            self._listener.close()
        for _ in range(self.config.intake_pool):
            self._work.put(None)
        with self._blocks_cond:
            self._blocks_cond.notify_all()

    # --- connections ---

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                ch = self._listener.accept()
            except (ChannelClosed, RecvTimeout):
                return
            t = threading.Thread(
                target=self._serve, args=(ch,), name=f"{self.node_id}-conn", daemon=True
            )
            t.start()
            self._threads.append(t)

    def _serve(self, ch) -> None:
        """Demux one connection: a SUBMIT stream or a DELIVER_REQ."""
        try:
            while not self._stop:
                msg_type, body = ch.recv()
                if msg_type == p.SUBMIT:
                    if self.config.opt_o2:
                        self._work.put((ch, body))
                    else:
                        with self._intake_lock:
                            self._handle_submit(ch, body)
                elif msg_type == p.DELIVER_REQ:
                    self._deliver(ch, p.unpack_deliver_req(body))
                    return
                else:
                    logger.warning("unexpected message type %d at orderer", msg_type)
        except (ChannelClosed, RecvTimeout):
            pass
        except Exception as exc:
            logger.exception("connection handler failed")
            self.fatal = exc

    # --- intake ---

    def _handle_submit(self, ch, envelope_bytes: bytes) -> None:
        tx_id = ""
        try:
            env = decode_envelope(envelope_bytes)
            sections = decode_payload(env.payload_bytes)
            header = decode_header(sections.header_bytes)
            tx_id = header.tx_id
            if not header.is_consistent():
                raise ValueError("tx_id does not match creator/nonce")
        except Exception:
            self.rejected += 1
            ch.send(p.REJECT, p.pack_reject(p.REJECT_MALFORMED, tx_id))
            return
        if not self.registry.is_authorized_client(header.creator):
            self.rejected += 1
            ch.send(p.REJECT, p.pack_reject(p.REJECT_UNAUTHORIZED, tx_id))
            return
        if not self._table.insert_if_absent(tx_id, envelope_bytes):
            self.rejected += 1
            ch.send(p.REJECT, p.pack_reject(p.REJECT_DUPLICATE, tx_id))
            return
        payload = tx_id.encode() if self.config.opt_o1 else envelope_bytes
        offset = self._log_client().publish(self.config.channel_id, payload)
        self.accepted += 1
        ch.send(p.ACK, p.pack_ack(offset, tx_id))

    def _log_client(self) -> LogClient:
        client = getattr(self._local, "log_client", None)
        if client is None:
            client = LogClient(self._network, self.node_id, self._log_node)
            self._local.log_client = client
        return client

    def _intake_worker(self) -> None:
        while True:
            item = self._work.get()
            if item is None:
                return
            ch, envelope_bytes = item
            try:
                self._handle_submit(ch, envelope_bytes)
            except ChannelClosed:
                pass
            except Exception as exc:
                logger.exception("intake worker failed")
                self.fatal = exc
                return

    # --- block assembly ---

    def _resolve_payload(self, payload: bytes) -> bytes:
        if self.config.opt_o1:
            tx_id = payload.decode()
            envelope = self._table.pop(tx_id)
            if envelope is None:
                raise UnknownTxId(f"ordered id {tx_id} has no stored payload")
            return envelope
        # Full envelope came through the log; drop its pending entry.
        env = decode_envelope(payload)
        header = decode_header(decode_payload(env.payload_bytes).header_bytes)
        self._table.pop(header.tx_id)
        return payload

    def _assemble_loop(self) -> None:
        cfg = self.config
        client = LogClient(self._network, self.node_id, self._log_node)
        try:
            sub = client.subscribe(cfg.channel_id, 0)
        except Exception as exc:
            self.fatal = exc
            return
        pending: list[bytes] = []
        first_ts = 0.0
        while not self._stop:
            timeout = None
            if pending:
                timeout = max(0.0, first_ts + cfg.block_timeout - time.perf_counter())
            try:
                record = sub.next(timeout)
            except RecvTimeout:
                self._cut(pending)
                pending = []
                continue
            except ChannelClosed:
                break
            except Exception as exc:
                self.fatal = exc
                break
            try:
                envelope = self._resolve_payload(record.payload)
            except Exception as exc:
                logger.error("block assembly halted: %s", exc)
                self.fatal = exc
                break
            if not pending:
                first_ts = time.perf_counter()
            pending.append(envelope)
            if len(pending) >= cfg.max_block_txs:
                self._cut(pending)
                pending = []
        sub.close()

    def _cut(self, envelopes: list[bytes]) -> None:
        if not envelopes:
            return
        with self._blocks_cond:
            prev = self._blocks[-1]
            block = build_block(
                prev.number + 1,
                prev.header,
                envelopes,
                sign=lambda msg: self._scheme.sign(self._signing_key, msg),
            )
            self._blocks.append(block)
            self._blocks_cond.notify_all()

    def block_count(self) -> int:
        with self._blocks_cond:
            return len(self._blocks)

    def wait_blocks(self, count: int, timeout: float | None = None) -> bool:
        """True once at least `count` blocks (incl. genesis) exist."""
        with self._blocks_cond:
            return self._blocks_cond.wait_for(
                lambda: len(self._blocks) >= count or self.fatal is not None, timeout
            )

    # --- delivery ---

    def _deliver(self, ch, from_block: int) -> None:
        from .ledger import encode_block

        n = max(1, from_block)  # every peer constructs genesis locally
        while not self._stop:
            with self._blocks_cond:
                ok = self._blocks_cond.wait_for(
                    lambda: len(self._blocks) > n or self._stop or self.fatal is not None,
                    timeout=0.5,
                )
                if self.fatal is not None:
                    break
                block = self._blocks[n] if ok and len(self._blocks) > n else None
            if block is None:
                continue
            try:
                ch.send(p.BLOCK, encode_block(block))
            except ChannelClosed:
                return
            n += 1
