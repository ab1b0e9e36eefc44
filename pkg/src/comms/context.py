"""
Per-rank communicator state: sequence numbers, comm workers, handles and
the traffic trace.
"""

import itertools
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from ..core.logging_config import LoggerMixin
from ..kernels.workers import WorkerPool
from .errors import BufferMutatedError, CollectiveAbortedError, CommError, ForeignHandleError
from .frames import MAX_RANKS, Frame, FrameKind
from .transport import Transport

# nonblocking collectives of these kinds never queue behind an allreduce
EXCHANGE_KINDS = frozenset({"alltoall", "scatter", "gather"})
REDUCE_LANE = "reduce"
EXCHANGE_LANE = "exchange"


@dataclass
class CommRecord:
    """One collective as seen by one rank."""
    seq: int
    kind: str
    label: str
    elements: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    payload_bytes: int = 0
    messages: int = 0
    pre_ms: float = 0.0
    wait_ms: float = 0.0
    post_ms: float = 0.0
    blocking: bool = True


class CommsTrace:
    """
    Thread-safe log of collectives issued by one rank.

    ``bytes_sent``/``bytes_received`` count only frames that crossed to
    another rank; ``payload_bytes`` also counts the rank's own segment.
    """

    def __init__(self):
        self._records: List[CommRecord] = []
        self._lock = threading.Lock()

    def add(self, record: CommRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self, kind: Optional[str] = None, label: Optional[str] = None) -> List[CommRecord]:
        with self._lock:
            out = list(self._records)
        if kind is not None:
            out = [r for r in out if r.kind == kind]
        if label is not None:
            out = [r for r in out if r.label == label]
        return out

    def total(self, attr: str, kind: Optional[str] = None, label: Optional[str] = None) -> float:
        return sum(getattr(r, attr) for r in self.records(kind, label))

    def count(self, kind: Optional[str] = None, label: Optional[str] = None) -> int:
        return len(self.records(kind, label))

    def clear(self) -> None:
        with self._lock:
            self._records.clear()

    def as_dicts(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.records()]


class CollectiveHandle:
    """
    Handle of an issued collective.

    ``wait()`` may be called any number of times; only the first call
    blocks and runs the post-processing.
    """

    def __init__(self, ctx: "RankContext", record: CommRecord,
                 future: Optional[Future] = None,
                 finish: Optional[Callable[[Any], Any]] = None,
                 guard: Optional[List[tuple]] = None):
        self.ctx = ctx
        self.record = record
        self._future = future
        self._finish = finish
        self._guard = guard or []
        self._result: Any = None
        self._done = False
        self._lock = threading.Lock()

    @property
    def op_id(self) -> int:
        return self.record.seq

    @property
    def state(self) -> str:
        return "complete" if self._done else "pending"

    @property
    def ready(self) -> bool:
        """True once the transfer finished, whether or not it was waited on."""
        return self._done or (self._future is not None and self._future.done())

    @property
    def timings(self) -> Dict[str, float]:
        r = self.record
        return {"pre_ms": r.pre_ms, "wait_ms": r.wait_ms, "post_ms": r.post_ms}

    def _check_guard(self) -> None:
        for live, snapshot in self._guard:
            if not np.array_equal(live, snapshot):
                raise BufferMutatedError(
                    f"buffer of {self.record.kind} seq={self.record.seq} was modified "
                    "between issue and wait"
                )

    def wait(self) -> Any:
        with self._lock:
            if self._done:
                return self._result
            start = time.perf_counter()
            value = self._future.result() if self._future is not None else None
            self.record.wait_ms += (time.perf_counter() - start) * 1e3
            if self.ctx.debug:
                self._check_guard()
            start = time.perf_counter()
            self._result = self._finish(value) if self._finish is not None else value
            self.record.post_ms += (time.perf_counter() - start) * 1e3
            self._done = True
            self.ctx.trace.add(self.record)
            return self._result

    @property
    def result(self) -> Any:
        return self.wait()


class RankContext(LoggerMixin):
    """
    Communicator of one rank.

    Collectives must be issued in the same order on every rank. Nonblocking
    collectives run on dedicated threads that never run compute kernels,
    split into two FIFO lanes of ``comm_workers`` threads each: allreduce and
    barrier on one, alltoall, scatter and gather on the other. An exchange
    issued after a pending allreduce therefore does not wait for it.
    ``compute`` is the rank's separate kernel pool.
    """

    def __init__(
        self,
        rank: int,
        world_size: int,
        transport: Transport,
        comm_workers: int = 1,
        compute_threads: int = 1,
        timeout_s: Optional[float] = 120.0,
        debug: bool = False,
    ):
        if not 0 <= rank < world_size:
            raise CommError(f"rank {rank} outside world of size {world_size}")
        if world_size > MAX_RANKS:
            raise CommError(f"at most {MAX_RANKS} ranks are supported")
        self.rank = rank
        self.world_size = world_size
        self.transport = transport
        self.comm_workers = comm_workers
        self.timeout_s = timeout_s
        self.debug = debug
        self.trace = CommsTrace()
        self.compute = WorkerPool(compute_threads, name=f"rank{rank}-compute")
        self._lanes = {
            lane: ThreadPoolExecutor(max_workers=comm_workers,
                                     thread_name_prefix=f"rank{rank}-comm-{lane}")
            for lane in (REDUCE_LANE, EXCHANGE_LANE)
        }
        self._comm_idents: set = set()
        self._seq = itertools.count()

    @property
    def mailbox(self):
        return self.transport.mailbox

    def next_seq(self) -> int:
        return next(self._seq)

    def send(self, dst: int, kind: FrameKind, seq: int, step: int,
             payload: np.ndarray, record: CommRecord) -> None:
        self.transport.send(Frame(seq, kind, self.rank, dst, step, payload))
        record.bytes_sent += payload.size * 4
        record.messages += 1

    def recv(self, src: int, kind: FrameKind, seq: int, step: int,
             record: CommRecord) -> np.ndarray:
        frame = self.mailbox.receive(src, seq, step, kind, self.timeout_s)
        record.bytes_received += frame.nbytes
        return frame.payload

    def abort(self, reason: str) -> None:
        """Tell every peer that this rank gave up on the current collectives."""
        self.mailbox.abort(self.rank, reason)
        for peer in range(self.world_size):
            if peer == self.rank:
                continue
            try:
                self.transport.send(Frame(0, FrameKind.ABORT, self.rank, peer, 0,
                                          reason.encode("utf-8")))
            except Exception:  # peer may already be gone
                pass

    def run_collective(self, record: CommRecord, body: Callable[[], Any],
                       blocking: bool, finish: Optional[Callable[[Any], Any]] = None,
                       guard: Optional[List[tuple]] = None) -> CollectiveHandle:
        """Execute ``body`` inline or on a comm worker and wrap it in a handle."""
        record.blocking = blocking

        def guarded() -> Any:
            try:
                return body()
            except CollectiveAbortedError:
                raise
            except Exception as e:
                self.logger.error("collective failed", rank=self.rank, kind=record.kind,
                                  seq=record.seq, error=str(e))
                self.abort(f"{record.kind} seq={record.seq} on rank {self.rank}: {e}")
                raise

        if blocking:
            start = time.perf_counter()
            value = guarded()
            record.wait_ms += (time.perf_counter() - start) * 1e3
            future: Future = Future()
            future.set_result(value)
            handle = CollectiveHandle(self, record, future, finish)
            handle.wait()
            return handle

        def on_comm_worker() -> Any:
            self._comm_idents.add(threading.get_ident())
            return guarded()

        lane = EXCHANGE_LANE if record.kind in EXCHANGE_KINDS else REDUCE_LANE
        future = self._lanes[lane].submit(on_comm_worker)
        self.logger.debug("collective issued", rank=self.rank, kind=record.kind,
                          seq=record.seq, lane=lane)
        return CollectiveHandle(self, record, future, finish, guard)

    def comm_thread_idents(self) -> set:
        return set(self._comm_idents)

    def close(self) -> None:
        for executor in self._lanes.values():
            executor.shutdown(wait=True)
        self.compute.shutdown()
        self.transport.close()


def wait(ctx: RankContext, handle: CollectiveHandle) -> Dict[str, float]:
    """Complete ``handle`` and return its timings."""
    if handle.ctx is not ctx:
        raise ForeignHandleError(
            f"handle seq={handle.op_id} belongs to rank {handle.ctx.rank}, not rank {ctx.rank}"
        )
    handle.wait()
    return handle.timings
