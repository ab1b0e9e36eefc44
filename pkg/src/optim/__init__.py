"""SGD and Split-SGD-BF16 optimizers."""

from .split_sgd import (
    DuplicateParameterError,
    OptimizerError,
    SplitSGD,
    SplitTensorBF16,
    bf16_truncate_forward,
    sgd_step_dense,
    sgd_step_sparse,
    split,
)

__all__ = [
    "DuplicateParameterError",
    "OptimizerError",
    "SplitSGD",
    "SplitTensorBF16",
    "bf16_truncate_forward",
    "sgd_step_dense",
    "sgd_step_sparse",
    "split",
]
