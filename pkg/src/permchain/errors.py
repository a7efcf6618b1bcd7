"""Exception types shared across the framework."""


class PermchainError(Exception):
    """Base class for all framework errors."""


class MalformedFrame(PermchainError):
    """A length prefix or count exceeds the remaining bytes of the buffer."""


class BadMagic(PermchainError):
    """Bytes decoded structurally but do not belong to the requested layer."""


class StorageFailure(PermchainError):
    """Durable backend I/O failed; wraps the underlying OSError."""


class LogUnavailable(PermchainError):
    """Ordering log unreachable (simulated fault injection only)."""


class PeerUnreachable(PermchainError):
    """Target node is not listening or the connection attempt failed."""


class ChannelClosed(PermchainError):
    """The other side closed the channel."""


class RecvTimeout(PermchainError):
    """No message arrived within the requested timeout."""


class GapDetected(PermchainError):
    """A block arrived out of sequence."""

    def __init__(self, expected: int, got: int):
        super().__init__(f"expected block {expected}, got {got}")
        self.expected = expected
        self.got = got


class NotFound(PermchainError):
    """Lookup key does not exist."""


class UnknownTxId(PermchainError):
    """An ordered transaction ID has no stored payload (fatal for a single orderer)."""


class EndorseError(PermchainError):
    """Base for business-rule failures during endorsement."""


class EndorseInsufficientFunds(EndorseError):
    pass


class EndorseUnknownAccount(EndorseError):
    pass


class TopologyError(PermchainError):
    """Topology config file is missing required nodes or keys."""


class SimulatedCrash(PermchainError):
    """Raised by injected abort points in crash-recovery tests."""
