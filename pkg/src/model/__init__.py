"""DLRM topology, replica, interaction and training steps."""

from .config import DlrmConfig, InteractionKind, build_config, interaction_width, load_config_file
from .dlrm import DLRM, MiniBatch, RankBatch, bce_loss, train_step_local
from .interaction import interaction, interaction_backward
from .parallel import (
    DistributedStepStats,
    GradBucketer,
    ShardError,
    TableShard,
    replica_fingerprint,
    train_step_distributed,
)

__all__ = [
    "DLRM",
    "DistributedStepStats",
    "DlrmConfig",
    "GradBucketer",
    "InteractionKind",
    "MiniBatch",
    "RankBatch",
    "ShardError",
    "TableShard",
    "bce_loss",
    "build_config",
    "interaction",
    "interaction_backward",
    "interaction_width",
    "load_config_file",
    "replica_fingerprint",
    "train_step_distributed",
    "train_step_local",
]
