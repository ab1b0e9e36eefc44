"""
Random DLRM training data.

Every draw comes from a generator keyed by ``(seed, iteration, stream)``, so
any rank can rebuild exactly the part of a global minibatch it needs
without talking to the others, and two runs with the same seed see the
same data whatever the rank count.
"""

from functools import lru_cache
from typing import Iterator, Optional, Sequence

import numpy as np

from ..core.config import IndexDistribution
from ..kernels.embedding import LookupBatch
from ..kernels.workers import static_partition
from ..model.config import DlrmConfig
from ..model.dlrm import DLRM, MiniBatch, RankBatch

ZIPF_EXPONENT = 1.05
LABEL_SEED_OFFSET = 1
LABEL_THRESHOLD = 0.5

_DENSE_STREAM = 0
_TABLE_STREAM_BASE = 1


@lru_cache(maxsize=16)
def zipf_cdf(M: int, s: float = ZIPF_EXPONENT) -> np.ndarray:
    """Cumulative mass of ``p(k) ~ 1/(k+1)^s`` over rows ``0..M-1``."""
    weights = 1.0 / np.power(np.arange(1, M + 1, dtype=np.float64), s)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def draw_indices(rng: np.random.Generator, M: int, size: int,
                 distribution: IndexDistribution = IndexDistribution.UNIFORM) -> np.ndarray:
    """``size`` row ids in ``[0, M)``; clustered draws favour low row ids."""
    if IndexDistribution(distribution) is IndexDistribution.UNIFORM:
        return rng.integers(0, M, size=size, dtype=np.int64)
    idx = np.searchsorted(zipf_cdf(M), rng.random(size), side="right")
    return np.minimum(idx, M - 1).astype(np.int64)


def fixed_bags(N: int, P: int, indices: np.ndarray) -> LookupBatch:
    return LookupBatch(np.arange(0, N * P + 1, P, dtype=np.int64), indices)


class SyntheticStream:
    """
    Deterministic stream of minibatches of ``batch_size`` samples.

    Dense features are ``U[0, 1)``; every bag holds exactly ``P`` lookups.
    Labels come from a hidden DLRM of the same topology seeded with
    ``seed + 1``: a sample is positive when its hidden prediction exceeds
    one half.
    """

    def __init__(
        self,
        config: DlrmConfig,
        batch_size: int,
        seed: int = 0,
        distribution: IndexDistribution = IndexDistribution.UNIFORM,
        labeler: Optional[DLRM] = None,
    ):
        self.config = config
        self.batch_size = batch_size
        self.seed = seed
        self.distribution = IndexDistribution(distribution)
        self.labeler = labeler if labeler is not None else DLRM.create(
            config, seed + LABEL_SEED_OFFSET
        )

    def _rng(self, iteration: int, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, iteration, stream])

    def dense(self, iteration: int) -> np.ndarray:
        rng = self._rng(iteration, _DENSE_STREAM)
        return rng.random((self.batch_size, self.config.dense_features), dtype=np.float32)

    def lookups(self, iteration: int, table: int) -> LookupBatch:
        cfg = self.config
        rng = self._rng(iteration, _TABLE_STREAM_BASE + table)
        idx = draw_indices(rng, cfg.M, self.batch_size * cfg.P, self.distribution)
        return fixed_bags(self.batch_size, cfg.P, idx)

    def labels(self, dense: np.ndarray, lookups: Sequence[LookupBatch]) -> np.ndarray:
        unlabeled = MiniBatch(dense, list(lookups), np.zeros(dense.shape[0], dtype=np.float32))
        pred = self.labeler.predict(unlabeled)
        return (pred > LABEL_THRESHOLD).astype(np.float32)

    def batch(self, iteration: int) -> MiniBatch:
        """The full global minibatch of ``iteration``."""
        dense = self.dense(iteration)
        lookups = [self.lookups(iteration, t) for t in range(self.config.S)]
        return MiniBatch(dense, lookups, self.labels(dense, lookups))

    def rank_batch(self, iteration: int, rank: int, world_size: int,
                   owned: Sequence[int]) -> RankBatch:
        """
        What ``rank`` trains on at ``iteration``: its sample slice and the
        global lookups of the tables it owns. Equal to sharding ``batch()``.
        """
        a, b = static_partition(self.batch_size, world_size, rank)
        dense = self.dense(iteration)
        lookups = [self.lookups(iteration, t) for t in range(self.config.S)]
        # labels come from the whole batch so they do not depend on the rank count
        labels = self.labels(dense, lookups)[a:b]
        splits = [e - s for s, e in (static_partition(self.batch_size, world_size, r)
                                     for r in range(world_size))]
        return RankBatch(
            rank=rank,
            dense=dense[a:b],
            labels=labels,
            lookups={t: lookups[t] for t in owned},
            splits=splits,
        )

    def __iter__(self) -> Iterator[MiniBatch]:
        iteration = 0
        while True:
            yield self.batch(iteration)
            iteration += 1


def generate_synthetic(
    config: DlrmConfig,
    seed: int,
    distribution: IndexDistribution = IndexDistribution.UNIFORM,
    batch_size: Optional[int] = None,
) -> SyntheticStream:
    """Stream of global minibatches; ``batch_size`` defaults to ``config.N``."""
    return SyntheticStream(config, batch_size or config.N, seed, distribution)


def hot_row_share(indices: np.ndarray, M: int, fraction: float = 0.01) -> float:
    """Share of lookups that hit the most popular ``fraction`` of rows."""
    counts = np.bincount(indices, minlength=M)
    top = max(int(M * fraction), 1)
    return float(np.sort(counts)[::-1][:top].sum() / max(len(indices), 1))


def duplicate_rate(batch: LookupBatch) -> float:
    """Fraction of lookups repeating a row already seen in the same bag."""
    dups = 0
    for n in range(batch.N):
        bag = batch.indices[batch.offsets[n]:batch.offsets[n + 1]]
        dups += len(bag) - len(np.unique(bag))
    return dups / max(batch.NS, 1)

