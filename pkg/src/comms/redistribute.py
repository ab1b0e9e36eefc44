"""
Embedding output exchange between model-parallel tables and data-parallel
samples.

Forward: each owner holds its tables' outputs for the whole global batch
(table-major) and every rank needs all tables for its own samples
(sample-major). Backward runs the same exchange in reverse. Three variants
move identical data with different numbers of calls:

* ``scatterlist``: one scatter (gather in backward) per table
* ``fused``: one scatter per owning rank over its coalesced tables
* ``alltoall``: a single alltoall
"""

import time
from typing import Callable, Dict, List, Mapping, Sequence

import numpy as np

from ..core.config import CommVariant
from .collectives import alltoall, gather, scatter
from .context import CollectiveHandle, RankContext

FWD_LABEL = "emb_fwd"
BWD_LABEL = "emb_bwd"


class ExchangeHandle:
    """Group of collective handles that together form one exchange."""

    def __init__(self, handles: List[CollectiveHandle], assemble: Callable[[list], object]):
        self.handles = handles
        self._assemble = assemble
        self._result = None
        self._done = False
        self.assemble_ms = 0.0

    def wait(self):
        if not self._done:
            values = [h.wait() for h in self.handles]
            start = time.perf_counter()
            self._result = self._assemble(values)
            self.assemble_ms = (time.perf_counter() - start) * 1e3
            self._done = True
        return self._result

    @property
    def wait_ms(self) -> float:
        return sum(h.record.wait_ms for h in self.handles)


def _offsets(splits: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(splits)]).astype(np.int64)


def owned_tables(owners: Sequence[int], rank: int) -> List[int]:
    return [t for t, o in enumerate(owners) if o == rank]


def _unpack(flat: np.ndarray, tables: Sequence[int], rows: int, E: int) -> Dict[int, np.ndarray]:
    block = flat.reshape(len(tables), rows, E) if tables else None
    return {t: block[i] for i, t in enumerate(tables)}


def redistribute_forward(
    ctx: RankContext,
    variant: CommVariant,
    owners: Sequence[int],
    local_outputs: Mapping[int, np.ndarray],
    splits: Sequence[int],
    E: int,
    blocking: bool = True,
) -> ExchangeHandle:
    """
    Issue the forward exchange.

    ``local_outputs[t]`` is the ``[GN][E]`` output of table ``t`` owned by
    this rank; ``splits[j]`` is the sample count of rank ``j``. The handle
    yields this rank's ``[n][E]`` slice of every table, in table order.
    """
    R, r = ctx.world_size, ctx.rank
    off = _offsets(splits)
    n_mine = splits[r]
    S = len(owners)
    variant = CommVariant(variant)

    def sample_slice(t: int, j: int) -> np.ndarray:
        return local_outputs[t][off[j]:off[j + 1]]

    if variant is CommVariant.ALLTOALL:
        mine = owned_tables(owners, r)
        segs = [
            np.concatenate([sample_slice(t, j).ravel() for t in mine]) if mine
            else np.zeros(0, dtype=np.float32)
            for j in range(R)
        ]
        handle = alltoall(ctx, segs, blocking=blocking, label=FWD_LABEL)

        def assemble(values: list) -> List[np.ndarray]:
            out: Dict[int, np.ndarray] = {}
            for j, flat in enumerate(values[0]):
                out.update(_unpack(flat, owned_tables(owners, j), n_mine, E))
            return [out[t] for t in range(S)]

        return ExchangeHandle([handle], assemble)

    if variant is CommVariant.FUSED_SCATTER:
        groups = sorted(set(owners))
        handles = []
        for o in groups:
            segs = None
            if o == r:
                tabs = owned_tables(owners, r)
                segs = [np.concatenate([sample_slice(t, j).ravel() for t in tabs])
                        for j in range(R)]
            handles.append(scatter(ctx, o, segs, blocking=blocking, label=FWD_LABEL))

        def assemble(values: list) -> List[np.ndarray]:
            out: Dict[int, np.ndarray] = {}
            for o, flat in zip(groups, values):
                out.update(_unpack(flat, owned_tables(owners, o), n_mine, E))
            return [out[t] for t in range(S)]

        return ExchangeHandle(handles, assemble)

    handles = []
    for t, o in enumerate(owners):
        segs = [sample_slice(t, j) for j in range(R)] if o == r else None
        handles.append(scatter(ctx, o, segs, blocking=blocking, label=FWD_LABEL))
    return ExchangeHandle(handles, lambda values: [v.reshape(n_mine, E) for v in values])


def redistribute_backward(
    ctx: RankContext,
    variant: CommVariant,
    owners: Sequence[int],
    d_emb: Sequence[np.ndarray],
    splits: Sequence[int],
    E: int,
    blocking: bool = True,
) -> ExchangeHandle:
    """
    Issue the backward exchange.

    ``d_emb[t]`` is the ``[n][E]`` gradient of table ``t`` for this rank's
    samples. The handle yields ``{t: [GN][E]}`` for the tables this rank owns.
    """
    R, r = ctx.world_size, ctx.rank
    mine = owned_tables(owners, r)
    variant = CommVariant(variant)

    def stack(per_rank: Sequence[np.ndarray], tables: Sequence[int]) -> Dict[int, np.ndarray]:
        # per_rank[j] holds rank j's rows for ``tables``, concatenated in table order
        parts = [p.reshape(len(tables), splits[j], E) for j, p in enumerate(per_rank)]
        return {t: np.concatenate([p[i] for p in parts], axis=0) for i, t in enumerate(tables)}

    def coalesce(tables: Sequence[int]) -> np.ndarray:
        if not tables:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate([np.ascontiguousarray(d_emb[t]).ravel() for t in tables])

    if variant is CommVariant.ALLTOALL:
        segs = [coalesce(owned_tables(owners, j)) for j in range(R)]
        handle = alltoall(ctx, segs, blocking=blocking, label=BWD_LABEL)
        return ExchangeHandle([handle], lambda values: stack(values[0], mine) if mine else {})

    if variant is CommVariant.FUSED_SCATTER:
        groups = sorted(set(owners))
        handles = [gather(ctx, o, coalesce(owned_tables(owners, o)), blocking=blocking,
                          label=BWD_LABEL) for o in groups]

        def assemble(values: list) -> Dict[int, np.ndarray]:
            for o, v in zip(groups, values):
                if o == r:
                    return stack(v, mine)
            return {}

        return ExchangeHandle(handles, assemble)

    handles = [gather(ctx, o, d_emb[t], blocking=blocking, label=BWD_LABEL)
               for t, o in enumerate(owners)]

    def assemble_list(values: list) -> Dict[int, np.ndarray]:
        return {t: stack(values[t], [t])[t] for t in mine}

    return ExchangeHandle(handles, assemble_list)
