"""
Hybrid-parallel training step.

MLPs are replicated and trained data-parallel on each rank's sample slice.
Embedding tables are owned whole by one rank each and evaluated for the
global minibatch; their outputs are exchanged so every rank gets all tables
for its own samples. Weight gradients of the MLPs are allreduced in buckets
while the backward pass is still running.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..core.config import CommVariant
from ..core.errors import DlrmKitError
from ..core.timing import PhaseTimer, maybe_phase
from ..comms.collectives import allreduce
from ..comms.context import CollectiveHandle, RankContext
from ..comms.redistribute import redistribute_backward, redistribute_forward
from ..kernels.embedding import embedding_backward, embedding_forward
from ..kernels.mlp import LayerGrads, mlp_backward, mlp_forward
from ..optim.split_sgd import SplitSGD
from .dlrm import DLRM, RankBatch, bce_loss
from .interaction import interaction, interaction_backward

GRAD_LABEL = "grad"
METRIC_LABEL = "metric"


class ShardError(DlrmKitError, ValueError):
    """Raised when tables cannot be placed on the requested ranks."""
    pass


@dataclass(frozen=True)
class TableShard:
    """Owner rank of every table."""
    owners: Tuple[int, ...]
    world_size: int

    @classmethod
    def round_robin(cls, S: int, world_size: int) -> "TableShard":
        if world_size > S:
            raise ShardError(
                f"{world_size} ranks but only {S} tables; at most {S} ranks can own a table"
            )
        return cls(tuple(t % world_size for t in range(S)), world_size)

    @property
    def max_ranks(self) -> int:
        return len(self.owners)

    def owned(self, rank: int) -> List[int]:
        return [t for t, o in enumerate(self.owners) if o == rank]

    def check(self, ctx: RankContext) -> None:
        if ctx.world_size != self.world_size:
            raise ShardError(
                f"shard built for {self.world_size} ranks used in a world of {ctx.world_size}"
            )


class GradBucketer:
    """
    Packs weight gradients into flat buckets and allreduces each one as soon
    as it is full or the caller flushes. Averaging happens on completion.
    """

    def __init__(self, ctx: RankContext, cap_bytes: int, blocking: bool):
        self.ctx = ctx
        self.cap_elements = max(cap_bytes // 4, 1)
        self.blocking = blocking
        self._pending: List[Tuple[int, np.ndarray]] = []
        self._pending_size = 0
        self._sealed: List[List[Tuple[int, np.ndarray]]] = []
        self._issued: List[Tuple[CollectiveHandle, np.ndarray, List[Tuple[int, np.ndarray]]]] = []
        self.wait_ms = 0.0
        self.buckets = 0

    def add(self, slot: int, grad: np.ndarray) -> None:
        self._pending.append((slot, grad))
        self._pending_size += grad.size
        if self._pending_size >= self.cap_elements:
            if self.blocking:
                # blocking reductions run at the next flush, outside the compute phases
                self._seal()
            else:
                self.flush()

    def _seal(self) -> None:
        if self._pending:
            self._sealed.append(self._pending)
            self._pending, self._pending_size = [], 0

    def flush(self) -> None:
        """Issue every sealed bucket and the partial one."""
        self._seal()
        for entries in self._sealed:
            buf = np.concatenate([g.reshape(-1) for _, g in entries])
            handle = allreduce(self.ctx, buf, blocking=self.blocking, average=True,
                               label=GRAD_LABEL)
            self._issued.append((handle, buf, entries))
            self.buckets += 1
        self._sealed.clear()

    def wait_all(self, n_slots: int) -> List[np.ndarray]:
        """Finish every bucket and return reduced gradients by slot."""
        self.flush()
        out: List[Optional[np.ndarray]] = [None] * n_slots
        for handle, buf, entries in self._issued:
            handle.wait()
            self.wait_ms += handle.record.wait_ms
            offset = 0
            for slot, g in entries:
                out[slot] = buf[offset:offset + g.size].reshape(g.shape)
                offset += g.size
        self._issued.clear()
        return out


@dataclass
class DistributedStepStats:
    """Exposed waits seen by the training loop in one step."""
    exchange_fwd_wait_ms: float = 0.0
    exchange_bwd_wait_ms: float = 0.0
    allreduce_wait_ms: float = 0.0
    buckets: int = 0


def train_step_distributed(
    ctx: RankContext,
    model: DLRM,
    batch: RankBatch,
    optimizer: SplitSGD,
    shard: TableShard,
    comm_variant: CommVariant = CommVariant.ALLTOALL,
    blocking: bool = False,
    bucket_cap_mb: float = 25.0,
    timer: Optional[PhaseTimer] = None,
    stats: Optional[DistributedStepStats] = None,
) -> float:
    """
    One hybrid-parallel step; returns the loss averaged over ranks.

    Gradient scaling: each rank's loss is a mean over its own samples,
    weighted by ``n_local * R / GN``, so averaging dense gradients over ranks
    and scaling embedding gradients by ``1/R`` yields the gradient of the
    global mean loss even when ``R`` does not divide ``GN``.
    """
    shard.check(ctx)
    cfg = model.config
    R, E = ctx.world_size, cfg.E
    pool = ctx.compute
    kind = cfg.interaction
    stats = stats if stats is not None else DistributedStepStats()
    owned = shard.owned(ctx.rank)

    with maybe_phase(timer, "embedding_fwd"):
        local_out = {t: embedding_forward(model.tables[t], batch.lookups[t], pool, model.bf16)
                     for t in owned}
    fwd_x = redistribute_forward(ctx, comm_variant, shard.owners, local_out,
                                 batch.splits, E, blocking=blocking)

    with maybe_phase(timer, "bottom_fwd"):
        bottom_out, bottom_state = mlp_forward(model.bottom, batch.dense, pool, model.bf16)
    emb_out = fwd_x.wait()
    stats.exchange_fwd_wait_ms += fwd_x.wait_ms

    with maybe_phase(timer, "interaction_fwd"):
        z = interaction(bottom_out, emb_out, kind)
    with maybe_phase(timer, "top_fwd"):
        out, top_state = mlp_forward(model.top, z, pool, model.bf16)
    with maybe_phase(timer, "loss"):
        # uneven slices: weight each rank by its share of the global batch
        share = batch.n * R / batch.global_n
        loss, d_pred = bce_loss(out.reshape(-1), batch.labels, weight=share)

    n_bottom = len(model.bottom.layers)
    n_slots = 2 * (n_bottom + len(model.top.layers))
    bucketer = GradBucketer(ctx, int(bucket_cap_mb * 1024 * 1024), blocking)

    def bucket_layer(base: int):
        def on_grads(idx: int, g: LayerGrads) -> None:
            slot = base + 2 * idx
            bucketer.add(slot, g.dW.data)
            bucketer.add(slot + 1, g.db)
        return on_grads

    with maybe_phase(timer, "top_bwd"):
        d_z, _ = mlp_backward(model.top, d_pred.reshape(-1, 1), top_state, pool, model.bf16,
                              on_layer_grads=bucket_layer(2 * n_bottom))
    bucketer.flush()

    with maybe_phase(timer, "interaction_bwd"):
        d_bottom, d_emb = interaction_backward(d_z, bottom_out, emb_out, kind)
        if R > 1:
            scale = np.float32(1.0 / R)
            d_emb = [d * scale for d in d_emb]
    bwd_x = redistribute_backward(ctx, comm_variant, shard.owners, d_emb,
                                  batch.splits, E, blocking=blocking)

    with maybe_phase(timer, "bottom_bwd"):
        mlp_backward(model.bottom, d_bottom, bottom_state, pool, model.bf16,
                     on_layer_grads=bucket_layer(0))
    bucketer.flush()

    d_tables = bwd_x.wait()
    stats.exchange_bwd_wait_ms += bwd_x.wait_ms
    with maybe_phase(timer, "embedding_bwd"):
        sparse = {t: embedding_backward(d_tables[t], batch.lookups[t]) for t in owned}
    with maybe_phase(timer, "embedding_update"):
        for t in owned:
            optimizer.step_sparse(t, sparse[t])

    grads = bucketer.wait_all(n_slots)
    stats.allreduce_wait_ms += bucketer.wait_ms
    stats.buckets += bucketer.buckets
    with maybe_phase(timer, "dense_update"):
        optimizer.step_dense(grads)

    metric = np.array([loss], dtype=np.float32)
    allreduce(ctx, metric, blocking=True, average=True, label=METRIC_LABEL)
    return float(metric[0])


def replica_fingerprint(model: DLRM) -> np.ndarray:
    """All dense parameters flattened, for cross-rank equality checks."""
    return np.concatenate([p.reshape(-1) for p in model.dense_parameters()])
