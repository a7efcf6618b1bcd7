"""Layered binary encoding of transaction envelopes and content hashing.

Every message on the wire is built from the same primitives: little-endian
integers, u32 length prefixes, no alignment padding.  An envelope is a stack
of independently decodable layers; decoding one layer leaves the layers
beneath it as opaque byte strings.  That property is what makes caching of
decoded layers worthwhile downstream, so the codec never peeks across layer
boundaries.

Layer stack, outermost first::

    Envelope := u32 sig_len  | sig | u32 payload_len | payload
    Payload  := u32 hdr_len  | header | u32 data_len | data
    Header   := u32 txid_len | txid | u32 chan_len | chan
                | u32 creator_len | creator | u64 nonce
    Data     := RWSet | u32 n_endorsements | Endorsement* | u32 pad_len | padding
    RWSet    := u32 n_reads  | (u32 key_len | key | u64 block_num | u32 tx_num)*
                | u32 n_writes | (u32 key_len | key | u32 val_len | val)*
    Endorsement := u32 endorser_len | endorser | u32 sig_len | sig
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .errors import BadMagic, MalformedFrame

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

HASH_LEN = 32


def content_hash(data: bytes) -> bytes:
    """256-bit content digest (SHA-256), stable across runs."""
    return hashlib.sha256(data).digest()


def derive_tx_id(creator: str, nonce: int) -> str:
    """Transaction ID: lowercase hex of sha256(creator_utf8 || nonce_le_u64).

    Self-certifying: anyone holding the header can recompute and check it.
    """
    return hashlib.sha256(creator.encode() + _U64.pack(nonce)).hexdigest()


class Version(NamedTuple):
    """Commit coordinates of the transaction that last wrote a key.

    Totally ordered by (block_num, tx_num); (0, 0) is reserved for keys
    created by the genesis state load.
    """

    block_num: int
    tx_num: int


GENESIS_VERSION = Version(0, 0)


class TxHeader(NamedTuple):
    tx_id: str
    channel_id: str
    creator: str
    nonce: int

    def is_consistent(self) -> bool:
        """True iff tx_id matches its derivation from (creator, nonce)."""
        return self.tx_id == derive_tx_id(self.creator, self.nonce)


class ReadWriteSet(NamedTuple):
    reads: tuple  # of (key: str, Version)
    writes: tuple  # of (key: str, value: bytes)


class Endorsement(NamedTuple):
    endorser: str
    signature: bytes


class RawEnvelope(NamedTuple):
    signature: bytes
    payload_bytes: bytes


class PayloadSections(NamedTuple):
    header_bytes: bytes
    data_bytes: bytes


class EndorsementSection(NamedTuple):
    endorsements: tuple  # of Endorsement
    padding_len: int
    signed_message: bytes  # rwset bytes || padding, what each endorser signed


class BlockHeader(NamedTuple):
    number: int
    prev_hash: bytes
    data_hash: bytes


class Layer(enum.Enum):
    ENVELOPE = "envelope"
    PAYLOAD = "payload"
    HEADER = "header"
    RWSET = "rwset"
    ENDORSEMENTS = "endorsements"


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf: bytes, start: int = 0, end: int | None = None):
        self.buf = buf
        self.pos = start
        self.end = len(buf) if end is None else end

    def u32(self) -> int:
        pos = self.pos
        if pos + 4 > self.end:
            raise MalformedFrame("u32 prefix past end of buffer")
        self.pos = pos + 4
        return _U32.unpack_from(self.buf, pos)[0]

    def u64(self) -> int:
        pos = self.pos
        if pos + 8 > self.end:
            raise MalformedFrame("u64 field past end of buffer")
        self.pos = pos + 8
        return _U64.unpack_from(self.buf, pos)[0]

    def take(self, n: int) -> bytes:
        pos = self.pos
        if n < 0 or pos + n > self.end:
            raise MalformedFrame(f"length prefix {n} exceeds remaining bytes")
        self.pos = pos + n
        return self.buf[pos : pos + n]

    def lp_bytes(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == self.end


def _expect_consumed(r: _Reader, layer: str) -> None:
    if not r.done():
        raise BadMagic(f"{r.end - r.pos} trailing bytes after {layer} layer")


def _lp(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


# --- header ---


def encode_header(header: TxHeader) -> bytes:
    return b"".join(
        (
            _lp(header.tx_id.encode()),
            _lp(header.channel_id.encode()),
            _lp(header.creator.encode()),
            _U64.pack(header.nonce),
        )
    )


def decode_header(buf: bytes) -> TxHeader:
    r = _Reader(buf)
    try:
        tx_id = r.lp_bytes().decode()
        channel = r.lp_bytes().decode()
        creator = r.lp_bytes().decode()
    except UnicodeDecodeError as exc:
        raise MalformedFrame("header string field is not valid UTF-8") from exc
    nonce = r.u64()
    _expect_consumed(r, "header")
    return TxHeader(tx_id, channel, creator, nonce)


# --- read-write set ---


def encode_rwset(rwset: ReadWriteSet) -> bytes:
    parts = [_U32.pack(len(rwset.reads))]
    for key, version in rwset.reads:
        kb = key.encode()
        parts.append(_lp(kb))
        parts.append(_U64.pack(version[0]))
        parts.append(_U32.pack(version[1]))
    parts.append(_U32.pack(len(rwset.writes)))
    for key, value in rwset.writes:
        parts.append(_lp(key.encode()))
        parts.append(_lp(value))
    return b"".join(parts)


def _read_rwset(r: _Reader) -> ReadWriteSet:
    n_reads = r.u32()
    reads = []
    for _ in range(n_reads):
        key = r.lp_bytes().decode()
        reads.append((key, Version(r.u64(), r.u32())))
    n_writes = r.u32()
    writes = []
    for _ in range(n_writes):
        writes.append((r.lp_bytes().decode(), r.lp_bytes()))
    return ReadWriteSet(tuple(reads), tuple(writes))


def decode_rwset(data_bytes: bytes) -> ReadWriteSet:
    """Decode the read-write set at the head of a data section.

    Endorsements and padding that follow are left untouched, so this is
    usable both on a bare rwset buffer and on a whole data section.
    """
    return _read_rwset(_Reader(data_bytes))


# --- endorsements / data section ---


def encode_data(rwset_bytes: bytes, endorsements, padding_len: int) -> bytes:
    parts = [rwset_bytes, _U32.pack(len(endorsements))]
    for e in endorsements:
        parts.append(_lp(e.endorser.encode()))
        parts.append(_lp(e.signature))
    parts.append(_U32.pack(padding_len))
    parts.append(b"\x00" * padding_len)
    return b"".join(parts)


def decode_endorsements(data_bytes: bytes) -> EndorsementSection:
    """Decode the endorsement list and padding of a data section.

    The rwset at the head is skipped structurally; its raw bytes plus the
    padding form the message each endorser signed.
    """
    r = _Reader(data_bytes)
    _read_rwset(r)
    rwset_end = r.pos
    n = r.u32()
    endorsements = []
    for _ in range(n):
        endorser = r.lp_bytes().decode()
        endorsements.append(Endorsement(endorser, r.lp_bytes()))
    padding_len = r.u32()
    padding = r.take(padding_len)
    _expect_consumed(r, "endorsements")
    signed = data_bytes[:rwset_end] + padding
    return EndorsementSection(tuple(endorsements), padding_len, signed)


# --- payload / envelope ---


def encode_payload(header_bytes: bytes, data_bytes: bytes) -> bytes:
    return _lp(header_bytes) + _lp(data_bytes)


def decode_payload(payload_bytes: bytes) -> PayloadSections:
    r = _Reader(payload_bytes)
    header_bytes = r.lp_bytes()
    data_bytes = r.lp_bytes()
    _expect_consumed(r, "payload")
    return PayloadSections(header_bytes, data_bytes)


def endorsement_message(rwset: ReadWriteSet, padding_len: int) -> bytes:
    """Bytes an endorser signs: the serialized rwset plus zero padding."""
    return encode_rwset(rwset) + b"\x00" * padding_len


def encode_envelope(
    header: TxHeader,
    rwset: ReadWriteSet,
    endorsements,
    padding_len: int,
    sign: Callable[[bytes], bytes],
) -> bytes:
    """Assemble and sign a full transaction envelope.

    `sign` is called once over the payload bytes and its output becomes the
    envelope signature, so the result verifies under the creator's key.
    """
    payload = encode_payload(
        encode_header(header),
        encode_data(encode_rwset(rwset), endorsements, padding_len),
    )
    return _lp(sign(payload)) + _lp(payload)


def encode_envelope_from_parts(
    header_bytes: bytes,
    rwset_bytes: bytes,
    endorsements,
    padding_len: int,
    sign: Callable[[bytes], bytes],
) -> bytes:
    """Assemble an envelope from pre-encoded sections.

    Clients use this to wrap an endorser's response without re-encoding it,
    which keeps the endorsement signature valid over the exact rwset bytes.
    """
    payload = encode_payload(header_bytes, encode_data(rwset_bytes, endorsements, padding_len))
    return _lp(sign(payload)) + _lp(payload)


def decode_envelope(buf: bytes) -> RawEnvelope:
    r = _Reader(buf)
    signature = r.lp_bytes()
    payload_bytes = r.lp_bytes()
    _expect_consumed(r, "envelope")
    return RawEnvelope(signature, payload_bytes)


_DECODERS = {
    Layer.ENVELOPE: decode_envelope,
    Layer.PAYLOAD: decode_payload,
    Layer.HEADER: decode_header,
    Layer.RWSET: decode_rwset,
    Layer.ENDORSEMENTS: decode_endorsements,
}


def decode_layer(buf: bytes, layer: Layer):
    """Decode exactly one layer, leaving inner layers opaque."""
    return _DECODERS[layer](buf)


# --- block header ---


def encode_block_header(header: BlockHeader) -> bytes:
    return _U64.pack(header.number) + header.prev_hash + header.data_hash


def decode_block_header(buf: bytes) -> BlockHeader:
    r = _Reader(buf)
    number = r.u64()
    prev_hash = r.take(HASH_LEN)
    data_hash = r.take(HASH_LEN)
    _expect_consumed(r, "block header")
    return BlockHeader(number, prev_hash, data_hash)


@dataclass
class EnvelopeParts:
    """Fully decoded envelope, for tests and tools that need every layer."""

    envelope: RawEnvelope
    sections: PayloadSections
    header: TxHeader
    rwset: ReadWriteSet
    endorsements: tuple
    padding_len: int


def decode_all_layers(buf: bytes) -> EnvelopeParts:
    env = decode_envelope(buf)
    sections = decode_payload(env.payload_bytes)
    header = decode_header(sections.header_bytes)
    rwset = decode_rwset(sections.data_bytes)
    end = decode_endorsements(sections.data_bytes)
    return EnvelopeParts(env, sections, header, rwset, end.endorsements, end.padding_len)
