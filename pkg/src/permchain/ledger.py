"""Block and validation-flag types shared by all node roles.

A block is immutable once built, with one exception: the committer assigns
the per-transaction validation flags exactly once, before the block is
shared beyond the validation pipeline.  Invalid transactions stay in the
block with their flag; they are simply never applied.

Wire format::

    Block := u64 number | prev_hash(32) | data_hash(32)
             | u32 n_env | (u32 len | envelope)*
             | u32 sig_len | sig | u32 n_flags | flag_byte*
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .errors import BadMagic, MalformedFrame
from .wire import (
    HASH_LEN,
    BlockHeader,
    _Reader,
    content_hash,
    encode_block_header,
)

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class ValidationFlag(enum.IntEnum):
    VALID = 0
    BAD_ENVELOPE_SIG = 1
    BAD_ENDORSEMENT = 2
    MVCC_CONFLICT = 3
    MALFORMED = 4


@dataclass
class Block:
    header: BlockHeader
    envelopes: list  # of bytes, in ordering-log delivery order
    orderer_signature: bytes = b""
    flags: list = field(default_factory=list)  # empty until validated

    @property
    def number(self) -> int:
        return self.header.number

    def data_hash_ok(self) -> bool:
        return self.header.data_hash == content_hash(b"".join(self.envelopes))


def data_hash(envelopes) -> bytes:
    return content_hash(b"".join(envelopes))


def header_hash(header: BlockHeader) -> bytes:
    return content_hash(encode_block_header(header))


def genesis_block() -> Block:
    """Deterministic chain root: number 0, zero prev hash, no envelopes."""
    header = BlockHeader(0, b"\x00" * HASH_LEN, data_hash(()))
    return Block(header, [], b"")


def build_block(number: int, prev_header: BlockHeader, envelopes, sign=None) -> Block:
    """Assemble block `number` chained onto `prev_header`."""
    header = BlockHeader(number, header_hash(prev_header), data_hash(envelopes))
    signature = sign(encode_block_header(header)) if sign else b""
    return Block(header, list(envelopes), signature)


def link_check(prev: Block, nxt: Block) -> bool:
    """True iff `nxt` directly extends `prev` in the hash chain."""
    return (
        nxt.header.number == prev.header.number + 1
        and nxt.header.prev_hash == header_hash(prev.header)
    )


def encode_block(block: Block) -> bytes:
    parts = [encode_block_header(block.header), _U32.pack(len(block.envelopes))]
    for env in block.envelopes:
        parts.append(_U32.pack(len(env)))
        parts.append(env)
    parts.append(_U32.pack(len(block.orderer_signature)))
    parts.append(block.orderer_signature)
    parts.append(_U32.pack(len(block.flags)))
    parts.append(bytes(int(f) for f in block.flags))
    return b"".join(parts)


def decode_block(buf: bytes) -> Block:
    r = _Reader(buf)
    number = r.u64()
    prev_hash = r.take(HASH_LEN)
    dhash = r.take(HASH_LEN)
    envelopes = [r.lp_bytes() for _ in range(r.u32())]
    signature = r.lp_bytes()
    n_flags = r.u32()
    flag_bytes = r.take(n_flags)
    try:
        flags = [ValidationFlag(b) for b in flag_bytes]
    except ValueError as exc:
        raise MalformedFrame("unknown validation flag value") from exc
    if not r.done():
        raise BadMagic(f"{r.end - r.pos} trailing bytes after block")
    if flags and len(flags) != len(envelopes):
        raise MalformedFrame("flag count does not match envelope count")
    return Block(BlockHeader(number, prev_hash, dhash), envelopes, signature, flags)
