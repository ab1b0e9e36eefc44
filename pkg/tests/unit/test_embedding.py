"""Tests for EmbeddingBag forward, backward and the sparse update strategies."""

import time

import numpy as np
import pytest

from src.bench.synthetic import draw_indices
from src.core.config import IndexDistribution, UpdateStrategy
from src.core.errors import ShapeError
from src.kernels.embedding import (
    EmbeddingTable,
    LookupBatch,
    LookupIndexError,
    SparseGrad,
    StripedLocks,
    embedding_backward,
    embedding_forward,
    embedding_update,
    embedding_update_reference,
    partition_rows,
)
from src.kernels.workers import WorkerPool


@pytest.fixture
def table(rng):
    return EmbeddingTable(rng.standard_normal((10, 3)).astype(np.float32))


def _duplicate_heavy_grad(rng, M=10, E=3, lookups=200):
    indices = rng.integers(0, M, size=lookups)
    return SparseGrad(indices, rng.standard_normal((lookups, E)).astype(np.float32))


def test_forward_sums_bags_including_empty(table):
    batch = LookupBatch.from_bags([[1, 2, 2], [], [9]])
    Y = embedding_forward(table, batch)

    W = table.weight
    np.testing.assert_allclose(Y[0], W[1] + 2 * W[2], rtol=1e-6)
    np.testing.assert_array_equal(Y[1], np.zeros(3, dtype=np.float32))
    np.testing.assert_array_equal(Y[2], W[9])


def test_forward_does_not_depend_on_thread_count(table, rng):
    batch = LookupBatch(np.arange(0, 41, 4), rng.integers(0, 10, size=40))
    single = embedding_forward(table, batch)
    pool = WorkerPool(4, name="fwd-test")
    try:
        multi = embedding_forward(table, batch, pool)
    finally:
        pool.shutdown()
    np.testing.assert_array_equal(single, multi)


def test_out_of_range_index_reports_position(table):
    batch = LookupBatch.from_bags([[0], [1, 10]])
    with pytest.raises(LookupIndexError) as info:
        embedding_forward(table, batch)
    assert info.value.position == 2
    assert info.value.index == 10
    assert isinstance(info.value, IndexError)


def test_negative_index_is_rejected_by_update(table):
    grad = SparseGrad(np.array([3, -1]), np.ones((2, 3), dtype=np.float32))
    with pytest.raises(LookupIndexError):
        embedding_update(table, grad, -0.1)


@pytest.mark.parametrize("offsets,indices", [
    ([1, 2], [0, 0]),
    ([0, 3], [0, 1]),
    ([0, 2, 1, 2], [0, 1]),
])
def test_lookup_batch_validation(offsets, indices):
    with pytest.raises(ShapeError):
        LookupBatch(np.array(offsets), np.array(indices))


def test_slice_bags_rebases_offsets():
    batch = LookupBatch.from_bags([[1], [2, 3], [4, 5, 6]])
    part = batch.slice_bags(1, 3)
    np.testing.assert_array_equal(part.offsets, [0, 2, 5])
    np.testing.assert_array_equal(part.indices, [2, 3, 4, 5, 6])


def test_backward_expands_bag_gradients():
    batch = LookupBatch.from_bags([[4, 4], [7]])
    dY = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    grad = embedding_backward(dY, batch)

    np.testing.assert_array_equal(grad.indices, [4, 4, 7])
    np.testing.assert_array_equal(grad.dW, [[1, 2], [1, 2], [3, 4]])


def test_backward_rejects_wrong_bag_count():
    with pytest.raises(ShapeError):
        embedding_backward(np.zeros((3, 2), dtype=np.float32), LookupBatch.from_bags([[0]]))


@pytest.mark.parametrize("nthreads", [1, 2, 3, 4, 8])
def test_race_free_update_is_bit_exact(table, rng, nthreads):
    grad = _duplicate_heavy_grad(rng)
    expected = EmbeddingTable(table.weight.copy())
    embedding_update_reference(expected, grad, -0.05)

    embedding_update(table, grad, -0.05, UpdateStrategy.RACE_FREE_PARTITIONED, nthreads)

    np.testing.assert_array_equal(table.weight, expected.weight)


@pytest.mark.parametrize("strategy", [UpdateStrategy.ATOMIC_EXCHANGE,
                                      UpdateStrategy.LOCKED_ROW_SIMD])
@pytest.mark.parametrize("nthreads", [1, 4])
def test_contended_strategies_match_reference(table, rng, strategy, nthreads):
    grad = _duplicate_heavy_grad(rng)
    expected = EmbeddingTable(table.weight.copy())
    embedding_update_reference(expected, grad, -0.05)

    embedding_update(table, grad, -0.05, strategy, nthreads, locks=StripedLocks(7))

    np.testing.assert_allclose(table.weight, expected.weight, rtol=1e-5, atol=1e-6)


def test_update_with_no_lookups_is_a_no_op(table):
    before = table.weight.copy()
    embedding_update(table, SparseGrad(np.zeros(0, dtype=np.int64),
                                       np.zeros((0, 3), dtype=np.float32)), -1.0)
    np.testing.assert_array_equal(table.weight, before)


def test_update_checks_arguments(table):
    grad = SparseGrad(np.array([0]), np.ones((1, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        embedding_update(table, grad, -0.1, nthreads=0)
    with pytest.raises(ShapeError):
        embedding_update(table, SparseGrad(np.array([0]), np.ones((1, 2), dtype=np.float32)), -0.1)


def test_partition_rows_is_contiguous_and_complete():
    M, T = 11, 4
    ranges = [partition_rows(M, T, t) for t in range(T)]
    assert ranges[0][0] == 0 and ranges[-1][1] == M
    for (_, end), (start, _) in zip(ranges, ranges[1:]):
        assert end == start
    with pytest.raises(ValueError):
        partition_rows(M, T, T)


def test_sparse_grad_length_check():
    with pytest.raises(ShapeError):
        SparseGrad(np.array([0, 1]), np.ones((1, 3), dtype=np.float32))


def _oracle_forward(W, bags):
    out = np.zeros((len(bags), W.shape[1]), dtype=np.float32)
    for n, bag in enumerate(bags):
        for i in bag:
            out[n] += W[i]
    return out


def test_kernels_match_sequential_oracles_on_random_instances():
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        M, E, N = (int(x) for x in rng.integers(1, [65, 17, 33]))
        bags = [list(rng.integers(0, M, size=rng.integers(0, 5))) for _ in range(N)]
        batch = LookupBatch.from_bags(bags)
        table = EmbeddingTable(rng.standard_normal((M, E)).astype(np.float32))

        np.testing.assert_allclose(embedding_forward(table, batch),
                                   _oracle_forward(table.weight, bags), rtol=1e-5, atol=1e-5)

        dY = rng.standard_normal((N, E)).astype(np.float32)
        grad = embedding_backward(dY, batch)
        expected_rows = [dY[n] for n, bag in enumerate(bags) for _ in bag]
        np.testing.assert_array_equal(grad.dW.reshape(-1, E),
                                      np.array(expected_rows, dtype=np.float32).reshape(-1, E))

        expected = EmbeddingTable(table.weight.copy())
        embedding_update_reference(expected, grad, -0.1)
        nthreads = int(rng.integers(1, 17))
        race_free = EmbeddingTable(table.weight.copy())
        embedding_update(race_free, grad, -0.1, UpdateStrategy.RACE_FREE_PARTITIONED, nthreads)
        np.testing.assert_array_equal(race_free.weight, expected.weight)

        strategy = (UpdateStrategy.ATOMIC_EXCHANGE, UpdateStrategy.LOCKED_ROW_SIMD)[int(rng.integers(2))]
        contended = EmbeddingTable(table.weight.copy())
        embedding_update(contended, grad, -0.1, strategy, min(nthreads, 4))
        np.testing.assert_allclose(contended.weight, expected.weight, rtol=1e-5, atol=1e-5)


def _timed_update(W, grad, strategy, nthreads=8, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        table = EmbeddingTable(W.copy())
        start = time.perf_counter()
        embedding_update(table, grad, -0.01, strategy, nthreads)
        best = min(best, time.perf_counter() - start)
    return best


@pytest.mark.slow
def test_race_free_update_beats_atomic_on_hot_rows():
    rng = np.random.default_rng(11)
    M, E, lookups = 100_000, 16, 20_000
    W = rng.standard_normal((M, E)).astype(np.float32)
    indices = draw_indices(rng, M, lookups, IndexDistribution.CLUSTERED)
    grad = SparseGrad(indices, rng.standard_normal((lookups, E)).astype(np.float32))

    race_free = _timed_update(W, grad, UpdateStrategy.RACE_FREE_PARTITIONED)
    atomic = _timed_update(W, grad, UpdateStrategy.ATOMIC_EXCHANGE)
    assert atomic >= 1.5 * race_free
