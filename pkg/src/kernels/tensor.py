"""
Dense FP32 storage and the 4-D blocked layouts used by the MLP kernels.

Dense tensors are plain C-contiguous ``numpy.float32`` arrays. Blocked
tensors re-tile a 2-D tensor into 4-D so that each innermost 2-D block is
a small contiguous GEMM operand:

* weights ``W[K][C]``      -> ``[K_b][C_b][b_c][b_k]``
* activations ``X[N][C]``  -> ``[C_b][N_b][b_n][b_c]``
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from ..core.errors import ShapeError

DenseTensor = npt.NDArray[np.float32]


class BlockingFactorError(ShapeError):
    """Raised when a blocking factor does not divide its extent."""
    pass


class BlockRole(str, Enum):
    """Which 4-D layout a blocked tensor uses."""
    WEIGHT = "weight"
    ACTIVATION = "activation"


def as_dense(x, ndim: int = None) -> DenseTensor:
    """Return ``x`` as a C-contiguous float32 array, checking its rank."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D tensor, got shape {arr.shape}")
    return arr


BF16_MASK = np.uint32(0xFFFF0000)


def bf16_truncate(x) -> DenseTensor:
    """FP32 copy of ``x`` with the low 16 bits of every element cleared."""
    bits = np.array(x, dtype=np.float32, order="C").view(np.uint32)
    bits &= BF16_MASK
    return bits.view(np.float32)


def pick_block(extent: int, requested: int) -> int:
    """Largest divisor of ``extent`` that is <= ``requested``."""
    if extent < 1:
        raise ShapeError(f"extent must be >= 1, got {extent}")
    for b in range(min(extent, max(requested, 1)), 0, -1):
        if extent % b == 0:
            return b
    return 1


@dataclass
class BlockedTensor4:
    """
    A 2-D tensor re-tiled into four dimensions.

    ``data`` has shape ``(outer1, outer2, inner1, inner2)``; for weights that
    is ``(K_b, C_b, b_c, b_k)`` and for activations ``(C_b, N_b, b_n, b_c)``.
    """
    data: np.ndarray
    role: BlockRole

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"blocked tensor needs 4 dims, got {self.data.shape}")

    @property
    def outer1(self) -> int:
        return self.data.shape[0]

    @property
    def outer2(self) -> int:
        return self.data.shape[1]

    @property
    def inner1(self) -> int:
        return self.data.shape[2]

    @property
    def inner2(self) -> int:
        return self.data.shape[3]

    @property
    def dense_shape(self) -> tuple:
        """Shape of the 2-D tensor this block tiling represents."""
        o1, o2, i1, i2 = self.data.shape
        if self.role is BlockRole.WEIGHT:
            return (o1 * i2, o2 * i1)  # (K, C)
        return (o2 * i1, o1 * i2)      # (N, C)

    def copy(self) -> "BlockedTensor4":
        return BlockedTensor4(self.data.copy(), self.role)


def _check_divides(extent: int, factor: int, what: str) -> int:
    if factor < 1 or extent % factor != 0:
        raise BlockingFactorError(
            f"blocking factor {factor} does not divide {what}={extent}"
        )
    return extent // factor


def to_blocked(t: DenseTensor, role: BlockRole, b_a: int, b_b: int) -> BlockedTensor4:
    """
    Re-tile a 2-D tensor.

    For ``WEIGHT`` the input is ``W[K][C]`` with ``b_a=b_k`` and ``b_b=b_c``;
    for ``ACTIVATION`` the input is ``X[N][C]`` with ``b_a=b_n`` and ``b_b=b_c``.
    """
    t = as_dense(t, ndim=2)
    rows, cols = t.shape
    outer_a = _check_divides(rows, b_a, "rows")
    outer_b = _check_divides(cols, b_b, "cols")
    tiles = t.reshape(outer_a, b_a, outer_b, b_b)
    if role is BlockRole.WEIGHT:
        data = tiles.transpose(0, 2, 3, 1)   # [K_b][C_b][b_c][b_k]
    else:
        data = tiles.transpose(2, 0, 1, 3)   # [C_b][N_b][b_n][b_c]
    return BlockedTensor4(np.ascontiguousarray(data), BlockRole(role))


def from_blocked(t: BlockedTensor4) -> DenseTensor:
    """Exact inverse of ``to_blocked``."""
    o1, o2, i1, i2 = t.data.shape
    if t.role is BlockRole.WEIGHT:
        dense = t.data.transpose(0, 3, 1, 2).reshape(o1 * i2, o2 * i1)
    else:
        dense = t.data.transpose(1, 2, 0, 3).reshape(o2 * i1, o1 * i2)
    return np.ascontiguousarray(dense)
