"""Feature interaction between the bottom MLP output and embedding outputs."""

from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from ..core.errors import ShapeError
from ..kernels.tensor import DenseTensor
from .config import InteractionKind, interaction_width


@lru_cache(maxsize=None)
def lower_pairs(rows: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the strictly lower triangle, row by row."""
    li = np.array([i for i in range(rows) for _ in range(i)], dtype=np.int64)
    lj = np.array([j for i in range(rows) for j in range(i)], dtype=np.int64)
    return li, lj


def _stack(bottom_out: DenseTensor, emb_out: Sequence[DenseTensor]) -> np.ndarray:
    n, E = bottom_out.shape
    for t, e in enumerate(emb_out):
        if e.shape != (n, E):
            raise ShapeError(f"embedding output {t} has shape {e.shape}, expected {(n, E)}")
    return np.stack([bottom_out, *emb_out], axis=1).astype(np.float32, copy=False)


def interaction(
    bottom_out: DenseTensor,
    emb_out: Sequence[DenseTensor],
    kind: InteractionKind = InteractionKind.DOT,
) -> DenseTensor:
    """
    ``[n][E]`` and S x ``[n][E]`` in, ``[n][E + S(S+1)/2]`` out for ``DOT``.

    ``CAT`` concatenates everything instead.
    """
    Z = _stack(bottom_out, emb_out)
    if InteractionKind(kind) is InteractionKind.CAT:
        return np.ascontiguousarray(Z.reshape(Z.shape[0], -1))
    li, lj = lower_pairs(Z.shape[1])
    pairs = (Z[:, li, :] * Z[:, lj, :]).sum(axis=-1, dtype=np.float32)
    return np.concatenate([bottom_out, pairs], axis=1).astype(np.float32, copy=False)


def interaction_backward(
    d_out: DenseTensor,
    bottom_out: DenseTensor,
    emb_out: Sequence[DenseTensor],
    kind: InteractionKind = InteractionKind.DOT,
) -> Tuple[DenseTensor, List[DenseTensor]]:
    """Adjoint of ``interaction``; returns ``(d_bottom, d_emb)``."""
    Z = _stack(bottom_out, emb_out)
    n, rows, E = Z.shape
    if d_out.shape != (n, interaction_width(rows - 1, E, kind)):
        raise ShapeError(f"d_out shape {d_out.shape} does not match the interaction output")

    if InteractionKind(kind) is InteractionKind.CAT:
        dZ = d_out.reshape(n, rows, E)
        return dZ[:, 0].copy(), [dZ[:, t].copy() for t in range(1, rows)]

    li, lj = lower_pairs(rows)
    D = np.zeros((n, rows, rows), dtype=np.float32)
    D[:, li, lj] = d_out[:, E:]
    dZ = np.matmul(D + D.transpose(0, 2, 1), Z)
    d_bottom = d_out[:, :E] + dZ[:, 0]
    return d_bottom.astype(np.float32), [np.ascontiguousarray(dZ[:, t]) for t in range(1, rows)]
