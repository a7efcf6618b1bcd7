"""permchain: a miniature permissioned blockchain with an
execute-order-validate transaction flow, six independently toggleable
architectural optimizations, and a benchmark harness that reproduces the
corresponding ablation experiments at desk scale.
"""

__version__ = "0.1.0"

from .committer import Committer, CommitResult, PipelineConfig, UnmarshalCache
from .endorser import Endorser, TransferProposal
from .identity import EndorsementPolicy, NodeIdentity, Registry, Role, check_policy, make_scheme
from .ledger import Block, ValidationFlag, build_block, genesis_block, link_check
from .orderer import Orderer, OrdererConfig, PayloadTable
from .ordering_log import LogClient, LogRecord, LogService, OrderingLog
from .statestore import DurableStateStore, MemoryStateStore, StateEntry, make_state_store
from .wire import (
    Endorsement,
    Layer,
    ReadWriteSet,
    TxHeader,
    Version,
    content_hash,
    decode_layer,
    derive_tx_id,
    encode_envelope,
)

__all__ = [
    "Block",
    "Committer",
    "CommitResult",
    "DurableStateStore",
    "Endorsement",
    "EndorsementPolicy",
    "Endorser",
    "Layer",
    "LogClient",
    "LogRecord",
    "LogService",
    "MemoryStateStore",
    "NodeIdentity",
    "Orderer",
    "OrdererConfig",
    "OrderingLog",
    "PayloadTable",
    "PipelineConfig",
    "ReadWriteSet",
    "Registry",
    "Role",
    "StateEntry",
    "TransferProposal",
    "TxHeader",
    "UnmarshalCache",
    "ValidationFlag",
    "Version",
    "build_block",
    "check_policy",
    "content_hash",
    "decode_layer",
    "derive_tx_id",
    "encode_envelope",
    "genesis_block",
    "link_check",
    "make_scheme",
    "make_state_store",
]
