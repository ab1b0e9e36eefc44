"""Compute kernels: dense/blocked tensors, EmbeddingBag and blocked MLP."""

from .embedding import (
    EmbeddingTable,
    LookupBatch,
    LookupIndexError,
    SparseGrad,
    embedding_backward,
    embedding_forward,
    embedding_update,
    partition_rows,
)
from .mlp import (
    MLP,
    Activation,
    FCLayer,
    KernelConfig,
    batch_reduce_gemm,
    fc_backward_data,
    fc_backward_weights,
    fc_forward,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .tensor import BlockedTensor4, BlockingFactorError, BlockRole, DenseTensor, from_blocked, to_blocked
from .workers import WorkerPool

__all__ = [
    "Activation",
    "BlockedTensor4",
    "BlockingFactorError",
    "BlockRole",
    "DenseTensor",
    "EmbeddingTable",
    "FCLayer",
    "KernelConfig",
    "LookupBatch",
    "LookupIndexError",
    "MLP",
    "SparseGrad",
    "WorkerPool",
    "batch_reduce_gemm",
    "embedding_backward",
    "embedding_forward",
    "embedding_update",
    "fc_backward_data",
    "fc_backward_weights",
    "fc_forward",
    "from_blocked",
    "init_mlp",
    "mlp_backward",
    "mlp_forward",
    "partition_rows",
    "to_blocked",
]
