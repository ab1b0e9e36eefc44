"""
EmbeddingBag kernels: forward, backward and sparse table updates.

A lookup batch is the (offsets, indices) pair of a multi-hot matrix with all
weights equal to one. Bag ``n`` covers lookups ``O[n] .. O[n+1]-1``.
"""

import threading
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..core.config import UpdateStrategy
from ..core.errors import DlrmKitError, ShapeError
from ..core.logging_config import get_logger
from .tensor import DenseTensor, as_dense, bf16_truncate
from .workers import WorkerPool, get_pool, static_partition

logger = get_logger(__name__)

DEFAULT_LOCK_STRIPES = 1024


class LookupIndexError(DlrmKitError, IndexError):
    """Raised when a lookup index falls outside the table."""

    def __init__(self, position: int, index: int, rows: int):
        self.position = position
        self.index = index
        self.rows = rows
        super().__init__(
            f"lookup {position} has index {index}, outside table rows [0, {rows})"
        )


@dataclass
class EmbeddingTable:
    """Table ``W[M][E]`` of float32 rows."""
    weight: DenseTensor

    def __post_init__(self):
        self.weight = as_dense(self.weight, ndim=2)
        if self.weight.shape[0] < 1 or self.weight.shape[1] < 1:
            raise ShapeError(f"embedding table needs M, E >= 1, got {self.weight.shape}")

    @property
    def M(self) -> int:
        return self.weight.shape[0]

    @property
    def E(self) -> int:
        return self.weight.shape[1]

    @property
    def nbytes(self) -> int:
        return self.weight.nbytes


@dataclass
class LookupBatch:
    """Offsets ``O`` (length N+1) and indices ``I`` (length O[N])."""
    offsets: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        o = self.offsets
        if o.ndim != 1 or len(o) < 1:
            raise ShapeError("offsets must be a non-empty 1-D array")
        if o[0] != 0:
            raise ShapeError(f"offsets must start at 0, got {o[0]}")
        if o[-1] != len(self.indices):
            raise ShapeError(
                f"offsets end at {o[-1]} but there are {len(self.indices)} indices"
            )
        if np.any(np.diff(o) < 0):
            raise ShapeError("offsets must be nondecreasing")

    @classmethod
    def from_bags(cls, bags: List[List[int]]) -> "LookupBatch":
        """Build a batch from a list of per-bag index lists."""
        lengths = [len(b) for b in bags]
        offsets = np.zeros(len(bags) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        flat = [i for b in bags for i in b]
        return cls(offsets, np.asarray(flat, dtype=np.int64))

    @property
    def N(self) -> int:
        return len(self.offsets) - 1

    @property
    def NS(self) -> int:
        return len(self.indices)

    def bag_ids(self) -> np.ndarray:
        """Bag number of every lookup."""
        return np.repeat(np.arange(self.N, dtype=np.int64), np.diff(self.offsets))

    def check_against(self, rows: int) -> None:
        _check_indices(self.indices, rows)

    def slice_bags(self, start: int, end: int) -> "LookupBatch":
        """Bags ``[start, end)`` as a new batch with rebased offsets."""
        o = self.offsets
        return LookupBatch(o[start:end + 1] - o[start], self.indices[o[start]:o[end]])


@dataclass
class SparseGrad:
    """Per-lookup gradient rows: ``dW[s]`` belongs to table row ``indices[s]``."""
    indices: np.ndarray
    dW: DenseTensor

    def __post_init__(self):
        if len(self.indices) != self.dW.shape[0]:
            raise ShapeError(
                f"{len(self.indices)} indices but {self.dW.shape[0]} gradient rows"
            )

    def __len__(self) -> int:
        return len(self.indices)

    def scaled(self, factor: float) -> "SparseGrad":
        return SparseGrad(self.indices, self.dW * np.float32(factor))


def _check_indices(indices: np.ndarray, rows: int) -> None:
    bad = np.flatnonzero((indices < 0) | (indices >= rows))
    if len(bad):
        pos = int(bad[0])
        raise LookupIndexError(pos, int(indices[pos]), rows)


def partition_rows(M: int, nthreads: int, tid: int) -> tuple:
    """Half-open row range ``[M_start, M_end)`` owned by thread ``tid``."""
    if not 0 <= tid < nthreads:
        raise ValueError(f"tid {tid} outside [0, {nthreads})")
    return static_partition(M, nthreads, tid)


def embedding_forward(
    table: EmbeddingTable,
    batch: LookupBatch,
    pool: Optional[WorkerPool] = None,
    bf16: bool = False,
) -> DenseTensor:
    """
    Sum the rows of each bag.

    With ``bf16`` each gathered row is truncated to BF16 before the sum.
    """
    W = table.weight
    batch.check_against(table.M)
    Y = np.zeros((batch.N, table.E), dtype=np.float32)
    if batch.N == 0:
        return Y
    bag_ids = batch.bag_ids()
    offsets = batch.offsets
    pool = pool or get_pool(1)

    def run(n0: int, n1: int) -> None:
        s0, s1 = offsets[n0], offsets[n1]
        if s1 > s0:
            rows = W[batch.indices[s0:s1]]
            np.add.at(Y, bag_ids[s0:s1], bf16_truncate(rows) if bf16 else rows)

    pool.map_partitions(batch.N, run, parts=min(pool.size, batch.N))
    return Y


def embedding_backward(dY: DenseTensor, batch: LookupBatch) -> SparseGrad:
    """Expand bag gradients to one row per lookup."""
    dY = as_dense(dY, ndim=2)
    if dY.shape[0] != batch.N:
        raise ShapeError(f"dY has {dY.shape[0]} rows for a batch of {batch.N} bags")
    return SparseGrad(batch.indices.copy(), dY[batch.bag_ids()])


class StripedLocks:
    """Fixed pool of locks addressed by ``key % stripes``."""

    def __init__(self, stripes: int = DEFAULT_LOCK_STRIPES):
        self.stripes = stripes
        self._locks = [threading.Lock() for _ in range(stripes)]

    def __call__(self, key: int) -> threading.Lock:
        return self._locks[key % self.stripes]


def _update_sequential(W: DenseTensor, grad: SparseGrad, alpha: np.float32) -> None:
    np.add.at(W, grad.indices, alpha * grad.dW)


def _update_race_free(
    W: DenseTensor, grad: SparseGrad, alpha: np.float32, nthreads: int, pool: WorkerPool
) -> None:
    M = W.shape[0]
    scaled = alpha * grad.dW
    indices = grad.indices

    def run(m_start: int, m_end: int) -> None:
        # every thread scans all lookups but only touches its own rows
        mine = (indices >= m_start) & (indices < m_end)
        if mine.any():
            np.add.at(W, indices[mine], scaled[mine])

    pool.map_partitions(M, run, parts=nthreads)


def _compare_and_swap(bits: np.ndarray, row: int, expected: np.ndarray,
                      desired: np.ndarray, active: np.ndarray,
                      locks: StripedLocks) -> np.ndarray:
    """Element-wise CAS on the active elements of one row; returns which swapped."""
    with locks(row):
        current = bits[row]
        ok = active & (current == expected)
        current[ok] = desired[ok]
    return ok


def _update_atomic_exchange(
    W: DenseTensor, grad: SparseGrad, alpha: np.float32, nthreads: int,
    pool: WorkerPool, locks: StripedLocks,
) -> None:
    bits = W.view(np.uint32)
    scaled = alpha * grad.dW
    indices = grad.indices

    def run(s0: int, s1: int) -> None:
        for s in range(s0, s1):
            row = indices[s]
            pending = np.ones(W.shape[1], dtype=bool)
            while pending.any():
                old = bits[row].copy()
                new = (old.view(np.float32) + scaled[s]).view(np.uint32)
                # only retry elements whose CAS lost a race
                pending &= ~_compare_and_swap(bits, row, old, new, pending, locks)

    pool.map_partitions(len(indices), run, parts=nthreads)


def _update_locked_rows(
    W: DenseTensor, grad: SparseGrad, alpha: np.float32, nthreads: int,
    pool: WorkerPool, locks: StripedLocks,
) -> None:
    scaled = alpha * grad.dW
    indices = grad.indices

    def run(s0: int, s1: int) -> None:
        for s in range(s0, s1):
            row = indices[s]
            with locks(row):
                W[row] += scaled[s]

    pool.map_partitions(len(indices), run, parts=nthreads)


def embedding_update(
    table: EmbeddingTable,
    grad: SparseGrad,
    alpha: float,
    strategy: UpdateStrategy = UpdateStrategy.RACE_FREE_PARTITIONED,
    nthreads: int = 1,
    pool: Optional[WorkerPool] = None,
    locks: Optional[StripedLocks] = None,
) -> None:
    """
    Apply ``W[I[i]] += alpha * dW[i]`` for every lookup ``i``.

    ``alpha`` carries the sign; SGD passes ``-lr``. Only the race-free
    strategy is bit-identical to the sequential order when indices repeat.
    """
    if nthreads < 1:
        raise ValueError("nthreads must be >= 1")
    if len(grad) == 0:
        return
    _check_indices(grad.indices, table.M)
    if grad.dW.shape[1] != table.E:
        raise ShapeError(f"gradient width {grad.dW.shape[1]} != table width {table.E}")

    W = table.weight
    a = np.float32(alpha)
    pool = pool or get_pool(nthreads)
    strategy = UpdateStrategy(strategy)

    if nthreads == 1 and strategy is UpdateStrategy.RACE_FREE_PARTITIONED:
        _update_sequential(W, grad, a)
    elif strategy is UpdateStrategy.RACE_FREE_PARTITIONED:
        _update_race_free(W, grad, a, nthreads, pool)
    elif strategy is UpdateStrategy.ATOMIC_EXCHANGE:
        _update_atomic_exchange(W, grad, a, nthreads, pool, locks or StripedLocks())
    else:
        _update_locked_rows(W, grad, a, nthreads, pool, locks or StripedLocks())


def embedding_update_reference(table: EmbeddingTable, grad: SparseGrad, alpha: float) -> None:
    """Single-threaded update in lookup order."""
    for i, row in enumerate(grad.indices):
        table.weight[row] = table.weight[row] + np.float32(alpha) * grad.dW[i]
