"""
Wire frames shared by every transport.

Header layout (little-endian, 16 bytes)::

    u32 seq | u8 kind | u8 src | u8 dst | u8 flags | u64 payload_len

``flags`` carries the algorithm step within a collective. Data payloads are
raw FP32; ABORT and CONTROL payloads are UTF-8 text.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple, Union

import numpy as np

HEADER = struct.Struct("<IBBBBQ")
HEADER_SIZE = HEADER.size

MAX_RANKS = 256
MAX_STEPS = 256


class FrameKind(IntEnum):
    ALLREDUCE = 1
    ALLTOALL = 2
    SCATTER = 3
    GATHER = 4
    BARRIER = 5
    ABORT = 6
    CONTROL = 7

    @property
    def carries_data(self) -> bool:
        return self not in (FrameKind.ABORT, FrameKind.CONTROL)


Payload = Union[np.ndarray, bytes]


@dataclass
class Frame:
    seq: int
    kind: FrameKind
    src: int
    dst: int
    step: int
    payload: Payload

    @property
    def tag(self) -> Tuple[int, int, int]:
        """Matching key on the receiving side."""
        return (self.src, self.seq, self.step)

    @property
    def payload_bytes(self) -> bytes:
        if isinstance(self.payload, np.ndarray):
            return np.ascontiguousarray(self.payload, dtype=np.float32).tobytes()
        return self.payload

    @property
    def nbytes(self) -> int:
        if isinstance(self.payload, np.ndarray):
            return self.payload.size * 4
        return len(self.payload)

    def text(self) -> str:
        return self.payload_bytes.decode("utf-8", errors="replace")


def encode_header(frame: Frame) -> bytes:
    return HEADER.pack(
        frame.seq & 0xFFFFFFFF, int(frame.kind), frame.src, frame.dst,
        frame.step, frame.nbytes,
    )


def decode_header(raw: bytes) -> Tuple[int, FrameKind, int, int, int, int]:
    """Returns ``(seq, kind, src, dst, step, payload_len)``."""
    seq, kind, src, dst, step, length = HEADER.unpack(raw)
    return seq, FrameKind(kind), src, dst, step, length


def encode_frame(frame: Frame) -> bytes:
    return encode_header(frame) + frame.payload_bytes


def decode_payload(kind: FrameKind, raw: bytes) -> Payload:
    if kind.carries_data:
        return np.frombuffer(raw, dtype=np.float32).copy()
    return bytes(raw)
