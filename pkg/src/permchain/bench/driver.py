"""Client driver: endorsement fan-out and pipelined submission.

One driver models the paper's client machine: it requests endorsements from
the endorser pool, assembles and signs envelopes, and keeps up to `window`
submissions in flight against the orderer; a separate thread drains acks.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field

from .. import protocol as p
from ..errors import ChannelClosed, RecvTimeout
from ..wire import encode_envelope_from_parts
from .workload import TransferWorkload


@dataclass
class DriverStats:
    submitted: int = 0
    acked: int = 0
    rejected: int = 0
    endorse_failures: int = 0
    reject_codes: dict = field(default_factory=dict)
    acked_tx_ids: list = field(default_factory=list)
    rejected_tx_ids: list = field(default_factory=list)

    @property
    def finished(self) -> int:
        return self.acked + self.rejected


class ClientDriver:
    def __init__(
        self,
        network,
        scheme,
        client_id: str,
        client_key,
        orderer_id: str,
        endorser_ids,
        channel_id: str = "ch1",
        window: int = 1000,
        endorse_workers_per_node: int = 2,
    ):
        self.network = network
        self.scheme = scheme
        self.client_id = client_id
        self.client_key = client_key
        self.orderer_id = orderer_id
        self.endorser_ids = list(endorser_ids)
        self.channel_id = channel_id
        self.window = window
        self.endorse_workers_per_node = endorse_workers_per_node

    def run(self, workload: TransferWorkload, tx_count: int, nonce_base: int = 0) -> DriverStats:
        stats = DriverStats()
        tasks: queue.SimpleQueue = queue.SimpleQueue()
        envelopes: queue.Queue = queue.Queue(maxsize=max(2, self.window))
        done = threading.Event()
        inflight = threading.BoundedSemaphore(self.window)
        stats_lock = threading.Lock()

        for i in range(tx_count):
            tasks.put((nonce_base + i, workload.proposal(i)))

        n_workers = max(1, self.endorse_workers_per_node * len(self.endorser_ids))
        for _ in range(n_workers):
            tasks.put(None)

        def endorse_worker(endorser_id: str) -> None:
            ch = self.network.connect(self.client_id, endorser_id)
            try:
                while True:
                    task = tasks.get()
                    if task is None:
                        envelopes.put(None)
                        return
                    nonce, proposal = task
                    ch.send(
                        p.ENDORSE_REQ,
                        p.pack_endorse_req(
                            proposal.from_account, proposal.to_account, proposal.amount,
                            proposal.padding_len, self.client_id, nonce,
                        ),
                    )
                    msg_type, body = ch.recv()
                    if msg_type != p.ENDORSE_RESP:
                        with stats_lock:
                            stats.endorse_failures += 1
                        continue
                    header_bytes, rwset_bytes, endorser, signature = p.unpack_endorse_resp(body)
                    from ..wire import Endorsement

                    envelope = encode_envelope_from_parts(
                        header_bytes,
                        rwset_bytes,
                        [Endorsement(endorser, signature)],
                        proposal.padding_len,
                        lambda msg: self.scheme.sign(self.client_key, msg),
                    )
                    envelopes.put(envelope)
            finally:
                ch.close()

        submit_ch = self.network.connect(self.client_id, self.orderer_id)

        def submitter() -> None:
            remaining_workers = n_workers
            while remaining_workers:
                envelope = envelopes.get()
                if envelope is None:
                    remaining_workers -= 1
                    continue
                inflight.acquire()
                with stats_lock:
                    stats.submitted += 1
                submit_ch.send(p.SUBMIT, envelope)

        def ack_reader() -> None:
            expected = tx_count - stats.endorse_failures
            while stats.finished < expected:
                try:
                    msg_type, body = submit_ch.recv(timeout=5.0)
                except (RecvTimeout, ChannelClosed):
                    break
                if msg_type == p.ACK:
                    _, tx_id = p.unpack_ack(body)
                    with stats_lock:
                        stats.acked += 1
                        stats.acked_tx_ids.append(tx_id)
                elif msg_type == p.REJECT:
                    code, tx_id = p.unpack_reject(body)
                    with stats_lock:
                        stats.rejected += 1
                        stats.rejected_tx_ids.append(tx_id)
                        stats.reject_codes[code] = stats.reject_codes.get(code, 0) + 1
                try:
                    inflight.release()
                except ValueError:
                    pass
                expected = tx_count - stats.endorse_failures
            done.set()

        threads = []
        for i in range(n_workers):
            endorser_id = self.endorser_ids[i % len(self.endorser_ids)]
            t = threading.Thread(target=endorse_worker, args=(endorser_id,), daemon=True)
            t.start()
            threads.append(t)
        sub_t = threading.Thread(target=submitter, daemon=True)
        sub_t.start()
        ack_t = threading.Thread(target=ack_reader, daemon=True)
        ack_t.start()

        sub_t.join()
        done.wait(timeout=120.0)
        submit_ch.close()
        for t in threads:
            t.join(timeout=5.0)
        return stats
