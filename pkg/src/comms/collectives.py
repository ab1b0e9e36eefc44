"""
Collective operations over a ``RankContext``.

Allreduce is a ring reduce-scatter followed by a ring allgather. Every
collective takes a sequence number at issue time, so ranks must issue them
in the same order; frames carry that number and the algorithm step.
"""

import time
from typing import List, Optional, Sequence

import numpy as np

from .context import CollectiveHandle, CommRecord, RankContext
from .errors import LengthMismatchError
from .frames import MAX_STEPS, FrameKind


def chunk_bounds(length: int, parts: int) -> List[tuple]:
    """Ring chunk ranges; the first ``length % parts`` chunks are one longer."""
    base, extra = divmod(length, parts)
    bounds, start = [], 0
    for i in range(parts):
        end = start + base + (1 if i < extra else 0)
        bounds.append((start, end))
        start = end
    return bounds


def _expect_len(got: np.ndarray, expected: int, what: str, src: int) -> None:
    if got.size != expected:
        raise LengthMismatchError(
            f"{what}: received {got.size} elements from rank {src}, expected {expected}"
        )


def _ring_allreduce(ctx: RankContext, work: np.ndarray, seq: int,
                    record: CommRecord, kind: FrameKind) -> None:
    R, r = ctx.world_size, ctx.rank
    if R == 1:
        return
    if 2 * (R - 1) > MAX_STEPS:
        raise LengthMismatchError(f"ring of {R} ranks exceeds the step field")
    bounds = chunk_bounds(work.size, R)
    right, left = (r + 1) % R, (r - 1) % R

    for s in range(R - 1):
        a, b = bounds[(r - s) % R]
        ctx.send(right, kind, seq, s, work[a:b], record)
        got = ctx.recv(left, kind, seq, s, record)
        a, b = bounds[(r - s - 1) % R]
        _expect_len(got, b - a, "reduce-scatter", left)
        work[a:b] += got

    for s in range(R - 1):
        a, b = bounds[(r + 1 - s) % R]
        ctx.send(right, kind, seq, R - 1 + s, work[a:b], record)
        got = ctx.recv(left, kind, seq, R - 1 + s, record)
        a, b = bounds[(r - s) % R]
        _expect_len(got, b - a, "allgather", left)
        work[a:b] = got


def allreduce(
    ctx: RankContext,
    buf: np.ndarray,
    blocking: bool = True,
    average: bool = False,
    label: str = "allreduce",
    kind: FrameKind = FrameKind.ALLREDUCE,
) -> CollectiveHandle:
    """
    Sum ``buf`` elementwise across ranks, in place.

    The result is written to ``buf`` when the handle is waited on;
    ``average`` divides by the world size as post-processing.
    """
    start = time.perf_counter()
    seq = ctx.next_seq()
    record = CommRecord(seq, kind.name.lower(), label, elements=buf.size,
                        payload_bytes=buf.size * 4)
    work = np.array(buf, dtype=np.float32, copy=True).reshape(-1)
    guard = [(buf, work.copy())] if ctx.debug and not blocking else None
    R = ctx.world_size

    def body() -> np.ndarray:
        _ring_allreduce(ctx, work, seq, record, kind)
        return work

    def finish(result: np.ndarray) -> np.ndarray:
        if average and R > 1:
            result /= np.float32(R)
        buf[...] = result.reshape(buf.shape)
        return buf

    record.pre_ms = (time.perf_counter() - start) * 1e3
    return ctx.run_collective(record, body, blocking, finish, guard)


def alltoall(
    ctx: RankContext,
    send: Sequence[np.ndarray],
    blocking: bool = True,
    recv_sizes: Optional[Sequence[int]] = None,
    label: str = "alltoall",
) -> CollectiveHandle:
    """
    Personalized exchange: ``recv[j]`` on rank ``i`` is ``send[i]`` of rank ``j``.

    Segments may differ in length. When ``recv_sizes`` is given every
    received segment is checked against it.
    """
    start = time.perf_counter()
    R, r = ctx.world_size, ctx.rank
    if len(send) != R:
        raise LengthMismatchError(f"alltoall needs {R} segments, got {len(send)}")
    segs = [np.array(s, dtype=np.float32, copy=True).reshape(-1) for s in send]
    seq = ctx.next_seq()
    total = sum(s.size for s in segs)
    record = CommRecord(seq, "alltoall", label, elements=total, payload_bytes=total * 4)
    guard = [(s, c) for s, c in zip(send, segs)] if ctx.debug and not blocking else None

    def body() -> List[np.ndarray]:
        out: List[Optional[np.ndarray]] = [None] * R
        out[r] = segs[r]
        if recv_sizes is not None:
            _expect_len(segs[r], recv_sizes[r], "alltoall", r)
        for k in range(1, R):
            dst = (r + k) % R
            ctx.send(dst, FrameKind.ALLTOALL, seq, 0, segs[dst], record)
        for k in range(1, R):
            src = (r - k) % R
            got = ctx.recv(src, FrameKind.ALLTOALL, seq, 0, record)
            if recv_sizes is not None:
                _expect_len(got, recv_sizes[src], "alltoall", src)
            out[src] = got
        return out

    record.pre_ms = (time.perf_counter() - start) * 1e3
    return ctx.run_collective(record, body, blocking, guard=guard)


def scatter(
    ctx: RankContext,
    root: int,
    segments: Optional[Sequence[np.ndarray]] = None,
    blocking: bool = True,
    label: str = "scatter",
) -> CollectiveHandle:
    """``root`` sends ``segments[j]`` to rank ``j``; every rank gets its own segment."""
    start = time.perf_counter()
    R, r = ctx.world_size, ctx.rank
    seq = ctx.next_seq()
    segs = None
    if r == root:
        if segments is None or len(segments) != R:
            raise LengthMismatchError(f"scatter root needs {R} segments")
        segs = [np.array(s, dtype=np.float32, copy=True).reshape(-1) for s in segments]
    payload = sum(s.size for s in segs) if segs is not None else 0
    record = CommRecord(seq, "scatter", label, elements=payload, payload_bytes=payload * 4)

    def body() -> np.ndarray:
        if r != root:
            return ctx.recv(root, FrameKind.SCATTER, seq, 0, record)
        for k in range(1, R):
            dst = (root + k) % R
            ctx.send(dst, FrameKind.SCATTER, seq, 0, segs[dst], record)
        return segs[r]

    record.pre_ms = (time.perf_counter() - start) * 1e3
    return ctx.run_collective(record, body, blocking)


def gather(
    ctx: RankContext,
    root: int,
    segment: np.ndarray,
    blocking: bool = True,
    label: str = "gather",
) -> CollectiveHandle:
    """Every rank sends ``segment`` to ``root``; the root's result lists them by rank."""
    start = time.perf_counter()
    R, r = ctx.world_size, ctx.rank
    seq = ctx.next_seq()
    seg = np.array(segment, dtype=np.float32, copy=True).reshape(-1)
    record = CommRecord(seq, "gather", label, elements=seg.size, payload_bytes=seg.size * 4)

    def body() -> Optional[List[np.ndarray]]:
        if r != root:
            ctx.send(root, FrameKind.GATHER, seq, 0, seg, record)
            return None
        out: List[Optional[np.ndarray]] = [None] * R
        out[r] = seg
        for k in range(1, R):
            src = (root + k) % R
            out[src] = ctx.recv(src, FrameKind.GATHER, seq, 0, record)
        return out

    record.pre_ms = (time.perf_counter() - start) * 1e3
    return ctx.run_collective(record, body, blocking)


def barrier(ctx: RankContext) -> None:
    """Return once every rank has entered the barrier."""
    allreduce(ctx, np.zeros(1, dtype=np.float32), blocking=True,
              label="barrier", kind=FrameKind.BARRIER)
