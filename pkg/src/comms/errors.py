"""Exceptions raised by the collective layer."""

from ..core.errors import DlrmKitError


class CommError(DlrmKitError):
    """Base exception for communication failures."""
    pass


class CollectiveMismatchError(CommError):
    """Ranks disagree on the collective issued at a sequence number."""
    pass


class LengthMismatchError(CommError, ValueError):
    """A received payload does not have the agreed length."""
    pass


class CollectiveAbortedError(CommError):
    """Another rank aborted the collective; carries its diagnostic."""

    def __init__(self, origin: int, reason: str):
        self.origin = origin
        self.reason = reason
        super().__init__(f"collective aborted by rank {origin}: {reason}")


class CommTimeoutError(CommError, TimeoutError):
    """A receive did not complete within the configured timeout."""
    pass


class ForeignHandleError(CommError):
    """A handle was waited on by a context that did not issue it."""
    pass


class BufferMutatedError(CommError):
    """A buffer changed between a nonblocking issue and its wait."""
    pass
