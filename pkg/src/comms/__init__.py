"""Rank-based message passing: transports, collectives and embedding exchange."""

from .collectives import allreduce, alltoall, barrier, gather, scatter
from .context import CollectiveHandle, CommRecord, CommsTrace, RankContext, wait
from .errors import (
    BufferMutatedError,
    CollectiveAbortedError,
    CollectiveMismatchError,
    CommError,
    CommTimeoutError,
    ForeignHandleError,
    LengthMismatchError,
)
from .launcher import connect_tcp, launch_inprocess, make_inprocess_world
from .redistribute import redistribute_backward, redistribute_forward
from .transport import InProcessFabric, LinkModel, TcpTransport

__all__ = [
    "BufferMutatedError",
    "CollectiveAbortedError",
    "CollectiveHandle",
    "CollectiveMismatchError",
    "CommError",
    "CommRecord",
    "CommTimeoutError",
    "CommsTrace",
    "ForeignHandleError",
    "InProcessFabric",
    "LengthMismatchError",
    "LinkModel",
    "RankContext",
    "TcpTransport",
    "allreduce",
    "alltoall",
    "barrier",
    "connect_tcp",
    "gather",
    "launch_inprocess",
    "make_inprocess_world",
    "redistribute_backward",
    "redistribute_forward",
    "scatter",
    "wait",
]
