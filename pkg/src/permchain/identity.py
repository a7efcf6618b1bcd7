"""Membership registry, signing schemes and endorsement-policy evaluation.

The registry is the trust root: it maps node ids to a role and a
verification key and is built once at startup, after which every check is a
read-only lookup.  Two interchangeable signature schemes are provided:

* ``ed25519`` (default): real asymmetric signatures through the system
  libcrypto.  Runs without the GIL, so signature checks parallelize.
* ``hmac``: keyed 256-bit MAC with per-node secrets derived from a shared
  registry secret.  Orders of magnitude faster; meant for unit tests and
  for experiments that do not measure crypto cost.  The active scheme is
  recorded in experiment output because crypto cost affects throughput.
"""

from __future__ import annotations

import enum
import hashlib
import hmac as _hmac
import threading
from dataclasses import dataclass, field
from typing import Iterable

from .wire import Endorsement


class Role(enum.Enum):
    CLIENT = "Client"
    ENDORSER = "Endorser"
    ORDERER = "Orderer"
    COMMITTER = "Committer"
    BLOCK_STORE = "BlockStore"


@dataclass(frozen=True)
class NodeIdentity:
    node_id: str
    role: Role
    public_key: bytes


class SignatureScheme:
    """Interface shared by the two schemes; all methods are thread-safe."""

    name = "abstract"

    def keypair(self, node_id: str, seed: bytes) -> tuple[object, bytes]:
        """Return (signing key, verification key bytes) for a node."""
        raise NotImplementedError

    def sign(self, signing_key, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


class Ed25519Scheme(SignatureScheme):
    name = "ed25519"

    def __init__(self):
        # Verification requires an EVP key object; cache per public key so
        # repeated checks against the same endorser skip the key import.
        self._pub_cache: dict[bytes, object] = {}
        self._lock = threading.Lock()

    def keypair(self, node_id: str, seed: bytes):
        from . import _openssl

        if len(seed) != 32:
            seed = hashlib.sha256(seed).digest()
        key = _openssl.Ed25519PrivateKey(seed)
        return key, key.public_bytes

    def sign(self, signing_key, message: bytes) -> bytes:
        return signing_key.sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        pk = self._pub_cache.get(public_key)
        if pk is None:
            from . import _openssl

            with self._lock:
                pk = self._pub_cache.get(public_key)
                if pk is None:
                    pk = _openssl.Ed25519PublicKey(public_key)
                    self._pub_cache[public_key] = pk
        return pk.verify(message, signature)


class HmacScheme(SignatureScheme):
    """Keyed MAC over a shared registry secret; verifier == signer key."""

    name = "hmac"

    def keypair(self, node_id: str, seed: bytes):
        secret = _hmac.new(seed, node_id.encode(), hashlib.sha256).digest()
        return secret, secret

    def sign(self, signing_key, message: bytes) -> bytes:
        return _hmac.new(signing_key, message, hashlib.sha256).digest()

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        expected = _hmac.new(public_key, message, hashlib.sha256).digest()
        return _hmac.compare_digest(expected, signature)


def make_scheme(name: str) -> SignatureScheme:
    if name == "ed25519":
        return Ed25519Scheme()
    if name == "hmac":
        return HmacScheme()
    raise ValueError(f"unknown signature scheme {name!r}")


@dataclass(frozen=True)
class EndorsementPolicy:
    """k-of-n threshold over a fixed set of eligible endorsers."""

    required: int
    eligible: frozenset

    def __post_init__(self):
        if not (1 <= self.required <= len(self.eligible)):
            raise ValueError("policy requires 1 <= required <= |eligible|")


@dataclass
class Registry:
    """Immutable-after-startup membership map, node_id -> identity."""

    scheme: SignatureScheme
    _nodes: dict = field(default_factory=dict)

    def register(self, node_id: str, role: Role, public_key: bytes) -> NodeIdentity:
        if node_id in self._nodes:
            raise ValueError(f"node id {node_id!r} already registered")
        ident = NodeIdentity(node_id, role, public_key)
        self._nodes[node_id] = ident
        return ident

    def get(self, node_id: str) -> NodeIdentity | None:
        return self._nodes.get(node_id)

    def role_of(self, node_id: str) -> Role | None:
        ident = self._nodes.get(node_id)
        return ident.role if ident else None

    def nodes_with_role(self, role: Role) -> list[str]:
        return [n for n, ident in self._nodes.items() if ident.role is role]

    def is_authorized_client(self, node_id: str) -> bool:
        """Submission authorization: creator exists and has role Client."""
        ident = self._nodes.get(node_id)
        return ident is not None and ident.role is Role.CLIENT

    def verify(self, node_id: str, message: bytes, signature: bytes) -> bool:
        ident = self._nodes.get(node_id)
        if ident is None:
            return False
        return self.scheme.verify(ident.public_key, message, signature)

    def default_policy(self) -> EndorsementPolicy:
        """1-of-all-endorsers, the bundled default."""
        return EndorsementPolicy(1, frozenset(self.nodes_with_role(Role.ENDORSER)))


def check_policy(
    registry: Registry,
    policy: EndorsementPolicy,
    endorsements: Iterable[Endorsement],
    signed_bytes: bytes,
) -> bool:
    """True iff >= required distinct eligible endorsers validly signed."""
    satisfied = set()
    for e in endorsements:
        if e.endorser in satisfied or e.endorser not in policy.eligible:
            continue
        if registry.verify(e.endorser, signed_bytes, e.signature):
            satisfied.add(e.endorser)
            if len(satisfied) >= policy.required:
                return True
    return False
