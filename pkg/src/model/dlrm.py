"""
DLRM model: bottom MLP, embedding tables, interaction and top MLP, plus the
single-rank training step.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.errors import ShapeError
from ..core.logging_config import LoggerMixin
from ..core.timing import PhaseTimer, maybe_phase
from ..kernels.embedding import EmbeddingTable, LookupBatch, embedding_backward, embedding_forward
from ..kernels.mlp import MLP, KernelConfig, MLPState, init_mlp, mlp_backward, mlp_forward
from ..kernels.tensor import DenseTensor
from ..kernels.workers import WorkerPool, static_partition
from ..optim.split_sgd import SplitSGD
from .config import DlrmConfig
from .interaction import interaction, interaction_backward

LOSS_EPS = 1e-7
TABLE_SEED_BASE = 1000


@dataclass
class RankBatch:
    """What one rank trains on: its sample slice plus global lookups of its tables."""
    rank: int
    dense: DenseTensor
    labels: np.ndarray
    lookups: Dict[int, LookupBatch]
    splits: List[int]

    @property
    def n(self) -> int:
        return self.dense.shape[0]

    @property
    def global_n(self) -> int:
        return sum(self.splits)


@dataclass
class MiniBatch:
    """Global minibatch: dense features, one lookup batch per table, labels."""
    dense: DenseTensor
    lookups: List[LookupBatch]
    labels: np.ndarray

    def __post_init__(self):
        n = self.dense.shape[0]
        if any(lb.N != n for lb in self.lookups):
            raise ShapeError("every table's lookup batch must cover all samples")
        if self.labels.shape != (n,):
            raise ShapeError(f"labels shape {self.labels.shape} != ({n},)")

    @property
    def N(self) -> int:
        return self.dense.shape[0]

    def splits(self, world_size: int) -> List[int]:
        return [b - a for a, b in (static_partition(self.N, world_size, r)
                                   for r in range(world_size))]

    def shard(self, rank: int, world_size: int, owned: Sequence[int]) -> RankBatch:
        """Slice samples for ``rank`` and keep full lookups of the tables it owns."""
        a, b = static_partition(self.N, world_size, rank)
        return RankBatch(
            rank=rank,
            dense=self.dense[a:b],
            labels=self.labels[a:b],
            lookups={t: self.lookups[t] for t in owned},
            splits=self.splits(world_size),
        )


def bce_loss(pred: np.ndarray, labels: np.ndarray, eps: float = LOSS_EPS, weight: float = 1.0):
    """
    Mean binary cross-entropy and its gradient with respect to ``pred``.

    Both are multiplied by ``weight`` before rounding to FP32.
    """
    p = np.clip(np.asarray(pred, dtype=np.float64).reshape(-1), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = len(p)
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) * weight
    d_pred = (p - y) / (p * (1.0 - p)) / n * weight
    return np.float32(loss), d_pred.astype(np.float32)


@dataclass
class ForwardState:
    emb_out: List[DenseTensor]
    bottom_out: DenseTensor
    bottom_state: MLPState
    top_state: MLPState
    pred: np.ndarray


class DLRM(LoggerMixin):
    """
    One model replica. ``tables`` holds only the tables this replica owns;
    a single-rank model owns all of them. Once registered with a split-mode
    optimizer, every pass reads parameters truncated to BF16.
    """

    def __init__(self, config: DlrmConfig, bottom: MLP, top: MLP,
                 tables: Dict[int, EmbeddingTable]):
        self.config = config
        self.bottom = bottom
        self.top = top
        self.tables = tables
        self.bf16 = False

    @classmethod
    def create(
        cls,
        config: DlrmConfig,
        seed: int,
        owned: Optional[Sequence[int]] = None,
        kernel: Optional[KernelConfig] = None,
    ) -> "DLRM":
        """
        Initialise a replica. MLP and table values depend only on ``seed``
        and the table id, so every rank and every sharding agree.
        """
        rng = np.random.default_rng([seed, 0])
        bottom = init_mlp(config.bottom_mlp, rng, sigmoid_last=False, kernel=kernel)
        top = init_mlp(config.top_sizes, rng, sigmoid_last=True, kernel=kernel)
        owned = range(config.S) if owned is None else owned
        bound = np.sqrt(1.0 / config.M)
        tables = {}
        for t in owned:
            t_rng = np.random.default_rng([seed, TABLE_SEED_BASE + t])
            W = t_rng.uniform(-bound, bound, size=(config.M, config.E)).astype(np.float32)
            tables[t] = EmbeddingTable(W)
        return cls(config, bottom, top, tables)

    def dense_parameters(self) -> List[np.ndarray]:
        """Bottom then top MLP arrays; gradients use the same order."""
        return self.bottom.parameters() + self.top.parameters()

    def num_dense_parameters(self) -> int:
        return self.bottom.num_parameters() + self.top.num_parameters()

    def register(self, optimizer: SplitSGD) -> None:
        optimizer.add_dense(self.dense_parameters())
        for t, table in sorted(self.tables.items()):
            optimizer.add_table(t, table)
        self.bf16 = optimizer.split_mode
        self.logger.debug("replica registered", dense_params=self.num_dense_parameters(),
                          tables=sorted(self.tables), mode=optimizer.mode.value)

    def forward(self, batch: MiniBatch, pool: Optional[WorkerPool] = None,
                timer: Optional[PhaseTimer] = None) -> ForwardState:
        kind = self.config.interaction
        with maybe_phase(timer, "embedding_fwd"):
            emb_out = [embedding_forward(self.tables[t], batch.lookups[t], pool, self.bf16)
                       for t in range(self.config.S)]
        with maybe_phase(timer, "bottom_fwd"):
            bottom_out, bottom_state = mlp_forward(self.bottom, batch.dense, pool, self.bf16)
        with maybe_phase(timer, "interaction_fwd"):
            z = interaction(bottom_out, emb_out, kind)
        with maybe_phase(timer, "top_fwd"):
            out, top_state = mlp_forward(self.top, z, pool, self.bf16)
        return ForwardState(emb_out, bottom_out, bottom_state, top_state, out.reshape(-1))

    def predict(self, batch: MiniBatch, pool: Optional[WorkerPool] = None) -> np.ndarray:
        return self.forward(batch, pool).pred


def train_step_local(
    model: DLRM,
    batch: MiniBatch,
    optimizer: SplitSGD,
    pool: Optional[WorkerPool] = None,
    timer: Optional[PhaseTimer] = None,
) -> float:
    """One forward/backward/update over every component on a single rank."""
    kind = model.config.interaction
    fwd = model.forward(batch, pool, timer)
    with maybe_phase(timer, "loss"):
        loss, d_pred = bce_loss(fwd.pred, batch.labels)
    with maybe_phase(timer, "top_bwd"):
        d_z, top_grads = mlp_backward(model.top, d_pred.reshape(-1, 1), fwd.top_state, pool,
                                     bf16=model.bf16)
    with maybe_phase(timer, "interaction_bwd"):
        d_bottom, d_emb = interaction_backward(d_z, fwd.bottom_out, fwd.emb_out, kind)
    with maybe_phase(timer, "bottom_bwd"):
        _, bottom_grads = mlp_backward(model.bottom, d_bottom, fwd.bottom_state, pool,
                                       bf16=model.bf16)
    with maybe_phase(timer, "embedding_bwd"):
        sparse = {t: embedding_backward(d_emb[t], batch.lookups[t]) for t in range(model.config.S)}
    with maybe_phase(timer, "embedding_update"):
        for t, grad in sparse.items():
            optimizer.step_sparse(t, grad)
    with maybe_phase(timer, "dense_update"):
        grads = [a for g in bottom_grads + top_grads for a in g.arrays()]
        optimizer.step_dense(grads)
    return float(loss)
