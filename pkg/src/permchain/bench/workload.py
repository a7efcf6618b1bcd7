"""Deterministic transfer workloads, genesis accounts, block pre-building.

Two pairing modes, both seeded:

* ``nonconflicting``: accounts are shuffled once into a ring and paired
  (ring[2i], ring[2i+1]); the transfer direction alternates every round.
  Any account is reused only after K/2 further transactions, comfortably
  above the largest in-flight window, so every transaction commits Valid
  regardless of ordering.  End-to-end runs assert zero invalid flags on it.
* ``uniform``: independent uniform random pairs; natural (low-rate)
  conflicts included.  Conflict-behavior tests use this one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..endorser import TransferProposal, encode_balance
from ..identity import Registry
from ..ledger import Block, build_block, encode_block, genesis_block
from ..statestore import StateEntry
from ..wire import (
    Endorsement,
    ReadWriteSet,
    TxHeader,
    Version,
    derive_tx_id,
    encode_envelope_from_parts,
    encode_header,
    encode_rwset,
)

DEFAULT_ACCOUNTS = 10_000
DEFAULT_BALANCE = 1_000_000
DEFAULT_PAYLOAD = 2900  # typical transaction payload size
DEFAULT_BLOCK_TXS = 100  # throughput was maximized at this block size


def account_name(i: int) -> str:
    return f"acct{i:06d}"


def make_accounts(count: int = DEFAULT_ACCOUNTS, balance: int = DEFAULT_BALANCE) -> dict[str, bytes]:
    value = encode_balance(balance)
    return {account_name(i): value for i in range(count)}


@dataclass
class TransferWorkload:
    account_names: list
    seed: int = 42
    mode: str = "nonconflicting"
    amount: int = 1
    payload_len: int = DEFAULT_PAYLOAD

    def __post_init__(self):
        if len(self.account_names) < 2:
            raise ValueError("need at least two accounts")
        rng = random.Random((self.seed, "workload"))
        self._ring = list(self.account_names)
        rng.shuffle(self._ring)
        self._rng = rng
        self.reuse_distance = len(self._ring) // 2 if self.mode == "nonconflicting" else 0

    def proposal(self, index: int) -> TransferProposal:
        if self.mode == "nonconflicting":
            pairs = len(self._ring) // 2
            rnd, i = divmod(index, pairs)
            a, b = self._ring[2 * i], self._ring[2 * i + 1]
            if rnd % 2:
                a, b = b, a
            return TransferProposal(a, b, self.amount, self.payload_len)
        if self.mode == "uniform":
            a, b = self._rng.sample(self.account_names, 2)
            return TransferProposal(a, b, self.amount, self.payload_len)
        raise ValueError(f"unknown workload mode {self.mode!r}")

    def proposals(self, count: int):
        for i in range(count):
            yield self.proposal(i)


def build_envelope(
    scheme,
    client_id: str,
    client_key,
    nonce: int,
    rwset: ReadWriteSet,
    endorsements,
    padding_len: int,
    channel_id: str = "ch1",
) -> bytes:
    header = TxHeader(derive_tx_id(client_id, nonce), channel_id, client_id, nonce)
    return encode_envelope_from_parts(
        encode_header(header),
        encode_rwset(rwset),
        endorsements,
        padding_len,
        lambda msg: scheme.sign(client_key, msg),
    )


def endorse_against(
    state: dict,
    proposal: TransferProposal,
    scheme,
    endorser_id: str,
    endorser_key,
):
    """Endorse a transfer against a plain dict state (offline building)."""
    balance_from, v_from = state[proposal.from_account]
    balance_to, v_to = state[proposal.to_account]
    rwset = ReadWriteSet(
        reads=((proposal.from_account, v_from), (proposal.to_account, v_to)),
        writes=(
            (proposal.from_account, encode_balance(balance_from - proposal.amount)),
            (proposal.to_account, encode_balance(balance_to + proposal.amount)),
        ),
    )
    message = encode_rwset(rwset) + b"\x00" * proposal.padding_len
    return rwset, Endorsement(endorser_id, scheme.sign(endorser_key, message))


def prebuild_blocks(
    registry: Registry,
    keys: dict,
    accounts: dict[str, bytes],
    workload: TransferWorkload,
    tx_count: int,
    block_size: int,
    *,
    client_id: str = "client",
    endorser_id: str = "endorser0",
    orderer_id: str = "orderer",
    channel_id: str = "ch1",
    valid: bool = True,
):
    """Pre-create a valid signed chain of blocks carrying `tx_count` transfers.

    Endorsements track a shadow state (balance, version) through the chain,
    so replaying the blocks through a committer yields all-Valid flags and a
    final state equal to the returned shadow state.
    """
    from ..endorser import decode_balance

    scheme = registry.scheme
    shadow = {name: (decode_balance(v), Version(0, 0)) for name, v in accounts.items()}
    blocks: list[Block] = []
    prev = genesis_block()
    nonce = 0
    number = 1
    pending = []
    for proposal in workload.proposals(tx_count):
        rwset, endorsement = endorse_against(shadow, proposal, scheme, endorser_id, keys[endorser_id])
        envelope = build_envelope(
            scheme, client_id, keys[client_id], nonce,
            rwset, [endorsement], proposal.padding_len, channel_id,
        )
        nonce += 1
        pending.append(envelope)
        if valid:
            idx = len(pending) - 1
            version = Version(number, idx)
            balance_from, _ = shadow[proposal.from_account]
            balance_to, _ = shadow[proposal.to_account]
            shadow[proposal.from_account] = (balance_from - proposal.amount, version)
            shadow[proposal.to_account] = (balance_to + proposal.amount, version)
        if len(pending) == block_size:
            block = build_block(
                number, prev.header, pending,
                sign=lambda msg: scheme.sign(keys[orderer_id], msg),
            )
            blocks.append(block)
            prev = block
            number += 1
            pending = []
    if pending:
        block = build_block(
            number, prev.header, pending,
            sign=lambda msg: scheme.sign(keys[orderer_id], msg),
        )
        blocks.append(block)
    final_state = {
        name: StateEntry(encode_balance(balance), version)
        for name, (balance, version) in shadow.items()
    }
    return blocks, final_state


def prebuilt_block_bytes(blocks) -> list[bytes]:
    return [encode_block(b) for b in blocks]
