"""Tests for the synthetic data generator."""

import numpy as np
import pytest

from src.bench.synthetic import (
    SyntheticStream,
    draw_indices,
    duplicate_rate,
    fixed_bags,
    generate_synthetic,
    hot_row_share,
    zipf_cdf,
)
from src.core.config import IndexDistribution


def test_same_seed_same_batches(tiny_config):
    a = generate_synthetic(tiny_config, seed=3).batch(5)
    b = generate_synthetic(tiny_config, seed=3).batch(5)
    np.testing.assert_array_equal(a.dense, b.dense)
    np.testing.assert_array_equal(a.labels, b.labels)
    for la, lb in zip(a.lookups, b.lookups):
        np.testing.assert_array_equal(la.indices, lb.indices)


def test_different_iterations_differ(tiny_config):
    stream = generate_synthetic(tiny_config, seed=3)
    assert not np.array_equal(stream.dense(0), stream.dense(1))


def test_batch_shape_and_ranges(four_table_config):
    batch = generate_synthetic(four_table_config, seed=0, batch_size=16).batch(0)
    assert batch.N == 16
    assert batch.dense.dtype == np.float32
    assert np.all((batch.dense >= 0) & (batch.dense < 1))
    assert set(np.unique(batch.labels)) <= {0.0, 1.0}
    assert len(batch.lookups) == four_table_config.S
    for lb in batch.lookups:
        assert lb.NS == 16 * four_table_config.P
        assert lb.indices.min() >= 0 and lb.indices.max() < four_table_config.M


@pytest.mark.parametrize("R", [1, 2, 3])
def test_rank_batch_equals_sharded_global_batch(four_table_config, R):
    stream = SyntheticStream(four_table_config, batch_size=8, seed=11)
    full = stream.batch(2)
    for r in range(R):
        owned = [t for t in range(four_table_config.S) if t % R == r]
        expected = full.shard(r, R, owned)
        got = stream.rank_batch(2, r, R, owned)
        np.testing.assert_array_equal(got.dense, expected.dense)
        np.testing.assert_array_equal(got.labels, expected.labels)
        assert got.splits == expected.splits
        assert sorted(got.lookups) == owned
        for t in owned:
            np.testing.assert_array_equal(got.lookups[t].indices, expected.lookups[t].indices)


def test_iterating_yields_consecutive_batches(tiny_config):
    stream = generate_synthetic(tiny_config, seed=1)
    it = iter(stream)
    first, second = next(it), next(it)
    np.testing.assert_array_equal(first.dense, stream.dense(0))
    np.testing.assert_array_equal(second.dense, stream.dense(1))


def test_uniform_indices_rarely_repeat_within_a_bag():
    rng = np.random.default_rng(0)
    M, N, P = 1_000_000, 256, 50
    batch = fixed_bags(N, P, draw_indices(rng, M, N * P))
    assert duplicate_rate(batch) < 0.01


def test_clustered_indices_concentrate_on_hot_rows():
    rng = np.random.default_rng(0)
    M = 100_000
    clustered = draw_indices(rng, M, 200_000, IndexDistribution.CLUSTERED)
    uniform = draw_indices(rng, M, 200_000, IndexDistribution.UNIFORM)
    assert clustered.min() >= 0 and clustered.max() < M
    assert hot_row_share(clustered, M) > 0.30
    assert hot_row_share(uniform, M) < 0.05


def test_zipf_cdf_is_normalised():
    cdf = zipf_cdf(1000)
    assert cdf[-1] == pytest.approx(1.0)
    assert np.all(np.diff(cdf) > 0)
