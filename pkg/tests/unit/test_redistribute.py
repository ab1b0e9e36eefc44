"""Tests for the embedding output exchange variants."""

import numpy as np
import pytest

from src.comms.launcher import launch_inprocess
from src.comms.redistribute import (
    BWD_LABEL,
    FWD_LABEL,
    owned_tables,
    redistribute_backward,
    redistribute_forward,
)
from src.core.config import CommVariant
from src.kernels.workers import static_partition
from src.model.parallel import TableShard

S, E, GN = 5, 3, 10


def _table_output(t):
    return (np.arange(GN * E, dtype=np.float32).reshape(GN, E) + 100 * t)


def _splits(R):
    return [b - a for a, b in (static_partition(GN, R, r) for r in range(R))]


def _exchange(R, variant, blocking):
    owners = TableShard.round_robin(S, R).owners
    splits = _splits(R)

    def fn(ctx):
        r = ctx.rank
        mine = owned_tables(owners, r)
        local = {t: _table_output(t) for t in mine}
        emb = redistribute_forward(ctx, variant, owners, local, splits, E, blocking).wait()
        back = redistribute_backward(ctx, variant, owners, emb, splits, E, blocking).wait()
        fwd = ctx.trace.records(label=FWD_LABEL)
        bwd = ctx.trace.records(label=BWD_LABEL)
        return emb, back, fwd, bwd

    return owners, splits, launch_inprocess(R, fn)


@pytest.mark.parametrize("variant", list(CommVariant))
@pytest.mark.parametrize("R", [1, 2, 3, 4])
@pytest.mark.parametrize("blocking", [True, False])
def test_forward_then_backward_restores_table_outputs(variant, R, blocking):
    owners, splits, results = _exchange(R, variant, blocking)
    offsets = np.concatenate([[0], np.cumsum(splits)])

    for r, (emb, back, _, _) in enumerate(results):
        assert len(emb) == S
        for t in range(S):
            np.testing.assert_array_equal(emb[t], _table_output(t)[offsets[r]:offsets[r + 1]])
        assert sorted(back) == owned_tables(owners, r)
        for t, full in back.items():
            np.testing.assert_array_equal(full, _table_output(t))


@pytest.mark.parametrize("R", [2, 4])
def test_variants_move_the_same_payload_in_different_call_counts(R):
    owners = TableShard.round_robin(S, R).owners
    expected_calls = {
        CommVariant.SCATTER_LIST: S,
        CommVariant.FUSED_SCATTER: len(set(owners)),
        CommVariant.ALLTOALL: 1,
    }
    volume = S * GN * E * 4

    for variant, calls in expected_calls.items():
        _, _, results = _exchange(R, variant, blocking=False)
        for _, _, fwd, bwd in results:
            assert len(fwd) == calls
            assert len(bwd) == calls
        assert sum(rec.payload_bytes for res in results for rec in res[2]) == volume
        assert sum(rec.payload_bytes for res in results for rec in res[3]) == volume
