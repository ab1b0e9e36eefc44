"""
Plain SGD and Split-SGD-BF16.

In split mode every FP32 parameter is seen as two 16-bit planes: ``hi``
holds the upper half of each bit pattern and is itself a valid BF16 tensor,
``lo`` holds the lower half. Both planes are strided views of the
parameter's own FP32 buffer, so the split adds no storage. Forward and
backward read the ``hi`` plane widened to FP32 (the model's ``bf16`` flag);
the update reassembles the exact FP32 value, applies plain SGD, and writes
both halves back.
"""

import sys
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.config import PrecisionMode, UpdateStrategy
from ..core.errors import DlrmKitError, ShapeError
from ..core.logging_config import LoggerMixin
from ..kernels.embedding import (
    DEFAULT_LOCK_STRIPES,
    EmbeddingTable,
    SparseGrad,
    StripedLocks,
    embedding_update,
)
from ..kernels.tensor import BF16_MASK, DenseTensor, bf16_truncate
from ..kernels.workers import WorkerPool

HI_MASK = BF16_MASK
LOSSY_MASK = np.uint32(0xFFFFFF00)

# positions of the halves (and of bits 8..15) inside one float32 element
if sys.byteorder == "little":
    _HI16, _LO16, _LO8 = 1, 0, 1
else:
    _HI16, _LO16, _LO8 = 0, 1, 2


class OptimizerError(DlrmKitError):
    """Base exception for optimizer misuse."""
    pass


class DuplicateParameterError(OptimizerError):
    """Raised when a parameter is registered twice."""
    pass


def _bits(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t, dtype=np.float32).view(np.uint32)


def _lanes(buffer: np.ndarray, dtype, width: int) -> np.ndarray:
    return buffer.reshape(-1).view(dtype).reshape(buffer.shape + (width,))


@dataclass
class SplitTensorBF16:
    """
    FP32 buffer seen as a BF16 ``hi`` plane and a ``lo`` plane.

    ``lo_bits`` is 16 for the exact split. The 8-bit variant keeps only bits
    8..15 as the low plane, clears bits 0..7 on every write, and cannot hold
    FP32 master weights exactly.
    """
    buffer: np.ndarray
    lo_bits: int = 16
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if self.lo_bits not in (16, 8):
            raise ValueError(f"lo_bits must be 16 or 8, got {self.lo_bits}")
        b = self.buffer
        if not isinstance(b, np.ndarray) or b.dtype != np.float32 or not b.flags.c_contiguous:
            raise ShapeError("split planes need a C-contiguous float32 buffer")

    @property
    def shape(self) -> tuple:
        return self.buffer.shape

    @property
    def hi(self) -> np.ndarray:
        return _lanes(self.buffer, np.uint16, 2)[..., _HI16]

    @property
    def lo(self) -> np.ndarray:
        if self.lo_bits == 16:
            return _lanes(self.buffer, np.uint16, 2)[..., _LO16]
        return _lanes(self.buffer, np.uint8, 4)[..., _LO8]

    @property
    def nbytes(self) -> int:
        return self.hi.nbytes + self.lo.nbytes

    def reconstruct(self, rows: Optional[np.ndarray] = None) -> DenseTensor:
        """FP32 values, optionally only for the given leading-axis ``rows``."""
        hi = self.hi if rows is None else self.hi[rows]
        lo = self.lo if rows is None else self.lo[rows]
        bits = hi.astype(np.uint32) << np.uint32(16)
        if self.lo_bits == 16:
            bits |= lo.astype(np.uint32)
        else:
            bits |= lo.astype(np.uint32) << np.uint32(8)
        return bits.view(np.float32)

    def assign(self, values: DenseTensor, rows: Optional[np.ndarray] = None) -> None:
        """Write ``values`` into both planes as one store per element."""
        bits = _bits(values)
        if self.lo_bits == 8:
            bits = bits & LOSSY_MASK
        words = self.buffer.view(np.uint32)
        with self._lock:
            if rows is None:
                words[...] = bits
            else:
                words[rows] = bits

    def bf16(self) -> DenseTensor:
        """The ``hi`` plane widened to FP32 with zero low bits."""
        return (self.hi.astype(np.uint32) << np.uint32(16)).view(np.float32)


def split(t: DenseTensor, lo_bits: int = 16, copy: bool = True) -> SplitTensorBF16:
    """
    Split an FP32 tensor into hi/lo planes.

    With ``copy=False`` the planes alias ``t`` itself, which must then be a
    C-contiguous float32 array; the 8-bit variant clears its bits 0..7.
    """
    buffer = np.array(t, dtype=np.float32, order="C") if copy else t
    state = SplitTensorBF16(buffer, lo_bits)
    if lo_bits == 8:
        words = buffer.view(np.uint32)
        words &= LOSSY_MASK
    return state


def bf16_truncate_forward(t: DenseTensor) -> DenseTensor:
    """FP32 copy of ``t`` with the low 16 bits of every element cleared."""
    return bf16_truncate(t)


def sgd_step_dense(
    param: np.ndarray,
    grad: np.ndarray,
    lr: float,
    mode: PrecisionMode = PrecisionMode.FP32,
    state: Optional[SplitTensorBF16] = None,
) -> None:
    """
    ``p -= lr * g`` in FP32.

    In split mode ``state`` must be the planes of ``param``; the master value
    is reassembled from them and written back through them.
    """
    if param.shape != grad.shape:
        raise ShapeError(f"parameter shape {param.shape} != gradient shape {grad.shape}")
    step = np.float32(lr) * grad.astype(np.float32, copy=False)
    if PrecisionMode(mode) is PrecisionMode.FP32:
        param -= step
        return
    if state is None or state.buffer is not param:
        raise OptimizerError("split mode needs the parameter's own SplitTensorBF16 planes")
    master = state.reconstruct()
    master -= step
    state.assign(master)


def sgd_step_sparse(
    table: EmbeddingTable,
    grad: SparseGrad,
    lr: float,
    mode: PrecisionMode = PrecisionMode.FP32,
    strategy: UpdateStrategy = UpdateStrategy.RACE_FREE_PARTITIONED,
    state: Optional[SplitTensorBF16] = None,
    nthreads: int = 1,
    pool: Optional[WorkerPool] = None,
    locks: Optional[StripedLocks] = None,
) -> None:
    """Sparse SGD through ``embedding_update`` with ``alpha = -lr``."""
    if len(grad) == 0:
        return
    if PrecisionMode(mode) is PrecisionMode.FP32:
        embedding_update(table, grad, -float(lr), strategy, nthreads, pool, locks)
        return
    if state is None or state.buffer is not table.weight:
        raise OptimizerError("split mode needs the table's own SplitTensorBF16 planes")

    # work on the touched rows only; row order inside the sub-table is preserved
    rows = np.unique(grad.indices)
    sub = EmbeddingTable(state.reconstruct(rows))
    remapped = SparseGrad(np.searchsorted(rows, grad.indices), grad.dW)
    embedding_update(sub, remapped, -float(lr), strategy, nthreads, pool, locks)
    state.assign(sub.weight, rows)


class SplitSGD(LoggerMixin):
    """
    SGD over registered dense parameters and embedding tables.

    Each parameter may be registered once. In ``SPLIT_BF16`` mode
    registration views the live array as hi/lo planes in place.
    """

    def __init__(
        self,
        lr: float,
        mode: PrecisionMode = PrecisionMode.FP32,
        strategy: UpdateStrategy = UpdateStrategy.RACE_FREE_PARTITIONED,
        nthreads: int = 1,
        pool: Optional[WorkerPool] = None,
        lo_bits: int = 16,
        lock_stripes: int = DEFAULT_LOCK_STRIPES,
    ):
        self.lr = np.float32(lr)
        self.mode = PrecisionMode(mode)
        self.strategy = UpdateStrategy(strategy)
        self.nthreads = nthreads
        self.pool = pool
        self.lo_bits = lo_bits
        self.locks = StripedLocks(lock_stripes)
        self.dense: List[np.ndarray] = []
        self.dense_states: List[Optional[SplitTensorBF16]] = []
        self.tables: Dict[int, EmbeddingTable] = {}
        self.table_states: Dict[int, Optional[SplitTensorBF16]] = {}

    @property
    def split_mode(self) -> bool:
        return self.mode is PrecisionMode.SPLIT_BF16

    def _check_new(self, arr: np.ndarray) -> None:
        known = self.dense + [t.weight for t in self.tables.values()]
        if any(arr is p or np.may_share_memory(arr, p) for p in known):
            raise DuplicateParameterError(f"parameter of shape {arr.shape} already registered")

    def _make_state(self, arr: np.ndarray) -> Optional[SplitTensorBF16]:
        if not self.split_mode:
            return None
        if not arr.flags.c_contiguous or arr.dtype != np.float32:
            raise OptimizerError("split mode needs C-contiguous float32 parameters")
        return split(arr, self.lo_bits, copy=False)

    def add_dense(self, params: Sequence[np.ndarray]) -> None:
        for p in params:
            self._check_new(p)
            self.dense.append(p)
            self.dense_states.append(self._make_state(p))

    def add_table(self, table_id: int, table: EmbeddingTable) -> None:
        if table_id in self.tables:
            raise DuplicateParameterError(f"table {table_id} already registered")
        self._check_new(table.weight)
        self.tables[table_id] = table
        self.table_states[table_id] = self._make_state(table.weight)
        if self.split_mode:
            self.logger.debug("table split into bf16 planes", table=table_id,
                              rows=table.M, lo_bits=self.lo_bits)

    def step_dense(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.dense):
            raise OptimizerError(f"{len(grads)} gradients for {len(self.dense)} parameters")
        for p, g, s in zip(self.dense, grads, self.dense_states):
            sgd_step_dense(p, g, self.lr, self.mode, s)

    def step_sparse(self, table_id: int, grad: SparseGrad) -> None:
        if table_id not in self.tables:
            raise OptimizerError(f"table {table_id} is not registered")
        sgd_step_sparse(
            self.tables[table_id], grad, self.lr, self.mode, self.strategy,
            self.table_states[table_id], self.nthreads, self.pool, self.locks,
        )

    def master_dense(self) -> List[DenseTensor]:
        """FP32 master values of the dense parameters."""
        return [s.reconstruct() if s is not None else p.copy()
                for p, s in zip(self.dense, self.dense_states)]

    def master_table(self, table_id: int) -> DenseTensor:
        state = self.table_states[table_id]
        return state.reconstruct() if state is not None else self.tables[table_id].weight.copy()

    def parameter_bytes(self) -> int:
        """Bytes of every array behind the registered parameters, planes included."""
        live = self.dense + [t.weight for t in self.tables.values()]
        states = self.dense_states + [self.table_states[t] for t in self.tables]
        total = sum(p.nbytes for p in live)
        for p, s in zip(live, states):
            if s is not None and not np.shares_memory(s.buffer, p):
                total += s.buffer.nbytes
        return total
