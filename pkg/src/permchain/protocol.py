"""Message type ids and body codecs for every inter-node conversation.

Bodies reuse the wire module's little-endian length-prefixed conventions.
"""

from __future__ import annotations

import struct

from .wire import _Reader

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

# client <-> orderer
SUBMIT = 1
ACK = 2
REJECT = 3

# <-> ordering log
PUBLISH = 10
OFFSET = 11
SUBSCRIBE = 12
RECORD = 13
LOG_ERR = 14

# orderer -> committer
DELIVER_REQ = 20
BLOCK = 21

# committer -> endorsers / block store
VALIDATED = 30

# block store queries
GETBLOCK = 40
GETTX = 41
BLOCK_RESP = 42
TX_RESP = 43
STORE_ERR = 44
SNAPSHOT_PUT = 45
SNAPSHOT_OK = 46

# client <-> endorser
ENDORSE_REQ = 50
ENDORSE_RESP = 51
ENDORSE_ERR = 52

# reject codes
REJECT_UNAUTHORIZED = 1
REJECT_MALFORMED = 2
REJECT_DUPLICATE = 3

# endorse error codes
ENDORSE_ERR_UNKNOWN_ACCOUNT = 1
ENDORSE_ERR_INSUFFICIENT_FUNDS = 2

# store error codes
STORE_ERR_NOTFOUND = 1
STORE_ERR_GAP = 2
STORE_ERR_IO = 3


def _lp(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


def pack_ack(offset: int, tx_id: str) -> bytes:
    return _U64.pack(offset) + _lp(tx_id.encode())


def unpack_ack(body: bytes) -> tuple[int, str]:
    r = _Reader(body)
    return r.u64(), r.lp_bytes().decode()


def pack_reject(code: int, tx_id: str) -> bytes:
    return _U16.pack(code) + _lp(tx_id.encode())


def unpack_reject(body: bytes) -> tuple[int, str]:
    code = _U16.unpack_from(body)[0]
    r = _Reader(body, start=2)
    return code, r.lp_bytes().decode()


def pack_publish(channel: str, payload: bytes) -> bytes:
    return _lp(channel.encode()) + payload


def unpack_publish(body: bytes) -> tuple[str, bytes]:
    r = _Reader(body)
    channel = r.lp_bytes().decode()
    return channel, body[r.pos :]


def pack_subscribe(channel: str, from_offset: int) -> bytes:
    return _lp(channel.encode()) + _U64.pack(from_offset)


def unpack_subscribe(body: bytes) -> tuple[str, int]:
    r = _Reader(body)
    return r.lp_bytes().decode(), r.u64()


def pack_record(offset: int, payload: bytes) -> bytes:
    return _U64.pack(offset) + payload


def unpack_record(body: bytes) -> tuple[int, bytes]:
    return _U64.unpack_from(body)[0], body[8:]


def pack_deliver_req(from_block: int) -> bytes:
    return _U64.pack(from_block)


def unpack_deliver_req(body: bytes) -> int:
    return _U64.unpack_from(body)[0]


def pack_endorse_req(
    from_account: str, to_account: str, amount: int, padding_len: int, client: str, nonce: int
) -> bytes:
    return b"".join(
        (
            _lp(from_account.encode()),
            _lp(to_account.encode()),
            _U64.pack(amount),
            _U32.pack(padding_len),
            _lp(client.encode()),
            _U64.pack(nonce),
        )
    )


def unpack_endorse_req(body: bytes):
    r = _Reader(body)
    return (
        r.lp_bytes().decode(),
        r.lp_bytes().decode(),
        r.u64(),
        r.u32(),
        r.lp_bytes().decode(),
        r.u64(),
    )


def pack_endorse_resp(header_bytes: bytes, rwset_bytes: bytes, endorser: str, signature: bytes) -> bytes:
    return _lp(header_bytes) + _lp(rwset_bytes) + _lp(endorser.encode()) + _lp(signature)


def unpack_endorse_resp(body: bytes):
    r = _Reader(body)
    return r.lp_bytes(), r.lp_bytes(), r.lp_bytes().decode(), r.lp_bytes()


def pack_gettx(tx_id: str) -> bytes:
    return _lp(tx_id.encode())


def unpack_gettx(body: bytes) -> str:
    return _Reader(body).lp_bytes().decode()


def pack_tx_resp(block_number: int, tx_index: int) -> bytes:
    return _U64.pack(block_number) + _U32.pack(tx_index)


def unpack_tx_resp(body: bytes) -> tuple[int, int]:
    return _U64.unpack_from(body)[0], _U32.unpack_from(body, 8)[0]
