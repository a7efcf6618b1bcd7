"""Endorsing node: speculative chaincode execution over a replicated state.

The bundled chaincode is a money transfer: read both account balances (with
their current versions), write the debited/credited balances.  Execution
never mutates state; the produced read-write set plus the endorser's
signature is the endorsement.  Validated blocks stream in from the
committer and are applied without re-validation.

Endorsements may be computed against slightly stale replicated state; the
committer's MVCC check catches any transaction that lost the race, which is
the designed behavior of the whole flow.
"""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass

from . import protocol as p
from .errors import (
    ChannelClosed,
    EndorseInsufficientFunds,
    EndorseUnknownAccount,
    GapDetected,
    RecvTimeout,
)
from .ledger import Block, ValidationFlag, decode_block
from .statestore import MemoryStateStore
from .wire import (
    Endorsement,
    ReadWriteSet,
    TxHeader,
    Version,
    decode_payload,
    decode_envelope,
    decode_rwset,
    derive_tx_id,
    encode_header,
    encode_rwset,
)

logger = logging.getLogger(__name__)

_U64 = struct.Struct("<Q")


def encode_balance(amount: int) -> bytes:
    return _U64.pack(amount)


def decode_balance(value: bytes) -> int:
    return _U64.unpack(value)[0]


@dataclass(frozen=True)
class TransferProposal:
    from_account: str
    to_account: str
    amount: int
    padding_len: int = 0

    def __post_init__(self):
        if self.from_account == self.to_account:
            raise ValueError("transfer needs two distinct accounts")
        if self.amount < 1:
            raise ValueError("transfer amount must be >= 1")


class Endorser:
    def __init__(self, node_id, registry, network, signing_key, channel_id="ch1"):
        self.node_id = node_id
        self.registry = registry
        self.state = MemoryStateStore()
        self.fatal: Exception | None = None
        self._scheme = registry.scheme
        self._signing_key = signing_key
        self._network = network
        self._channel_id = channel_id
        self._applied_through = 0  # genesis state load counts as block 0
        self._applied_cond = threading.Condition()
        self._listener = None
        self._threads: list[threading.Thread] = []
        self._stop = False

    def load_genesis(self, accounts: dict[str, bytes]) -> None:
        self.state.apply_writes(accounts.items(), Version(0, 0))

    # --- operations ---

    def endorse(self, proposal: TransferProposal, client: str, nonce: int):
        """Execute the transfer against current replicated state.

        Returns (TxHeader, ReadWriteSet, Endorsement); state is untouched.
        """
        src = self.state.get(proposal.from_account)
        dst = self.state.get(proposal.to_account)
        if src is None:
            raise EndorseUnknownAccount(proposal.from_account)
        if dst is None:
            raise EndorseUnknownAccount(proposal.to_account)
        balance = decode_balance(src.value)
        if balance < proposal.amount:
            raise EndorseInsufficientFunds(
                f"{proposal.from_account} holds {balance}, needs {proposal.amount}"
            )
        rwset = ReadWriteSet(
            reads=(
                (proposal.from_account, src.version),
                (proposal.to_account, dst.version),
            ),
            writes=(
                (proposal.from_account, encode_balance(balance - proposal.amount)),
                (proposal.to_account, encode_balance(decode_balance(dst.value) + proposal.amount)),
            ),
        )
        header = TxHeader(derive_tx_id(client, nonce), self._channel_id, client, nonce)
        message = encode_rwset(rwset) + b"\x00" * proposal.padding_len
        signature = self._scheme.sign(self._signing_key, message)
        return header, rwset, Endorsement(self.node_id, signature)

    def apply_validated(self, block: Block) -> None:
        """Apply the write sets of Valid transactions, no re-validation.

        Idempotent per block number; out-of-order delivery raises
        GapDetected and changes nothing.
        """
        n = block.number
        if n <= self._applied_through:
            return
        if n != self._applied_through + 1:
            raise GapDetected(self._applied_through + 1, n)
        for i, raw in enumerate(block.envelopes):
            if block.flags[i] is not ValidationFlag.VALID:
                continue
            sections = decode_payload(decode_envelope(raw).payload_bytes)
            rwset = decode_rwset(sections.data_bytes)
            self.state.apply_writes(rwset.writes, Version(n, i))
        with self._applied_cond:
            self._applied_through = n
            self._applied_cond.notify_all()

    def applied_through(self) -> int:
        return self._applied_through

    def wait_applied(self, block_number: int, timeout: float | None = None) -> bool:
        with self._applied_cond:
            return self._applied_cond.wait_for(
                lambda: self._applied_through >= block_number, timeout
            )

    # --- service loops ---

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
                if msg_type == p.ENDORSE_REQ:
                    self._handle_endorse(ch, body)
                elif msg_type == p.VALIDATED:
                    block = decode_block(body)
                    try:
                        self.apply_validated(block)
                    except GapDetected as exc:
                        logger.warning("endorser %s: %s", self.node_id, exc)
                else:
                    logger.warning("unexpected message type %d at endorser", msg_type)
        except (ChannelClosed, RecvTimeout):
            pass
        except Exception as exc:
            logger.exception("endorser connection failed")
            self.fatal = exc
        finally:
            ch.close()

    def _handle_endorse(self, ch, body: bytes) -> None:
        from_acct, to_acct, amount, padding_len, client, nonce = p.unpack_endorse_req(body)
        try:
            proposal = TransferProposal(from_acct, to_acct, amount, padding_len)
            header, rwset, endorsement = self.endorse(proposal, client, nonce)
        except EndorseUnknownAccount:
            ch.send(p.ENDORSE_ERR, struct.pack("<H", p.ENDORSE_ERR_UNKNOWN_ACCOUNT))
            return
        except (EndorseInsufficientFunds, ValueError):
            ch.send(p.ENDORSE_ERR, struct.pack("<H", p.ENDORSE_ERR_INSUFFICIENT_FUNDS))
            return
        ch.send(
            p.ENDORSE_RESP,
            p.pack_endorse_resp(
                encode_header(header), encode_rwset(rwset), endorsement.endorser, endorsement.signature
            ),
        )

    def close(self) -> None:
        self._stop = True
        if self._listener is not None:
            self._listener.close()
