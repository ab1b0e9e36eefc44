"""Tests for SGD and Split-SGD-BF16."""

import tracemalloc

import numpy as np
import pytest

from src.core.config import PrecisionMode
from src.core.errors import ShapeError
from src.kernels.embedding import EmbeddingTable, SparseGrad
from src.optim.split_sgd import (
    DuplicateParameterError,
    OptimizerError,
    SplitSGD,
    bf16_truncate_forward,
    sgd_step_dense,
    sgd_step_sparse,
    split,
)


def _bits(a):
    return np.ascontiguousarray(a, dtype=np.float32).view(np.uint32)


def test_split_round_trip_is_exact(rng):
    t = (rng.standard_normal((64, 8)) * 10).astype(np.float32)
    t[0, :3] = [0.0, -0.0, np.float32(1e-40)]
    np.testing.assert_array_equal(_bits(split(t).reconstruct()), _bits(t))


def test_hi_plane_is_truncated_bf16(rng):
    t = rng.standard_normal(100).astype(np.float32)
    s = split(t)
    np.testing.assert_array_equal(_bits(s.bf16()), _bits(bf16_truncate_forward(t)))
    assert np.all(_bits(s.bf16()) & 0xFFFF == 0)
    assert s.hi.dtype == np.uint16


def test_reconstruct_and_assign_rows(rng):
    t = rng.standard_normal((6, 4)).astype(np.float32)
    s = split(t)
    rows = np.array([1, 4])
    np.testing.assert_array_equal(s.reconstruct(rows), t[rows])

    s.assign(np.full((2, 4), 3.5, dtype=np.float32), rows)
    assert np.all(s.reconstruct()[rows] == 3.5)
    np.testing.assert_array_equal(s.reconstruct()[0], t[0])


def test_eight_bit_low_plane_loses_bits(rng):
    t = rng.standard_normal(256).astype(np.float32)
    lossy = split(t, lo_bits=8)
    assert lossy.lo.dtype == np.uint8
    assert not np.array_equal(_bits(lossy.reconstruct()), _bits(t))
    with pytest.raises(ValueError):
        split(t, lo_bits=4)


def _run_trajectory(mode, rng_seed=5, steps=20, lo_bits=16):
    rng = np.random.default_rng(rng_seed)
    w = rng.standard_normal((8, 4)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    table = EmbeddingTable(rng.standard_normal((12, 4)).astype(np.float32))
    opt = SplitSGD(0.01, mode, lo_bits=lo_bits)
    opt.add_dense([w, b])
    opt.add_table(0, table)
    for _ in range(steps):
        opt.step_dense([rng.standard_normal((8, 4)).astype(np.float32) * 1e-2,
                        rng.standard_normal(4).astype(np.float32) * 1e-2])
        idx = rng.integers(0, 12, size=10)
        opt.step_sparse(0, SparseGrad(idx, rng.standard_normal((10, 4)).astype(np.float32)))
    return opt


def test_split_round_trip_over_random_bit_patterns():
    rng = np.random.default_rng(6)
    bits = rng.integers(0, 2**32, size=1_000_000, dtype=np.uint32)
    t = bits.view(np.float32)
    np.testing.assert_array_equal(_bits(split(t).reconstruct()), bits)


def test_split_master_weights_follow_fp32_trajectory():
    fp32 = _run_trajectory(PrecisionMode.FP32, steps=1000)
    split_opt = _run_trajectory(PrecisionMode.SPLIT_BF16, steps=1000)

    for a, b in zip(fp32.master_dense(), split_opt.master_dense()):
        np.testing.assert_array_equal(_bits(a), _bits(b))
    np.testing.assert_array_equal(_bits(fp32.master_table(0)), _bits(split_opt.master_table(0)))


def test_split_planes_alias_the_live_arrays():
    opt = _run_trajectory(PrecisionMode.SPLIT_BF16, steps=3)
    live = opt.dense + [opt.tables[0].weight]
    states = opt.dense_states + [opt.table_states[0]]
    for p, s in zip(live, states):
        assert s.buffer is p
        assert np.shares_memory(s.hi, p) and np.shares_memory(s.lo, p)
        np.testing.assert_array_equal(_bits(s.reconstruct()), _bits(p))
        np.testing.assert_array_equal(_bits(s.bf16()), _bits(bf16_truncate_forward(p)))


def test_aliased_split_needs_a_float32_buffer():
    with pytest.raises(ShapeError):
        split(np.zeros(4), copy=False)
    with pytest.raises(ShapeError):
        split(np.zeros((4, 4), dtype=np.float32)[:, 1], copy=False)


def _max_drift_at_checkpoints(steps=200, every=50):
    rng = np.random.default_rng(11)
    w0 = (rng.standard_normal((16, 8)) + 2.0).astype(np.float32)
    exact, lossy = w0.copy(), w0.copy()
    fp32 = SplitSGD(0.01)
    fp32.add_dense([exact])
    eight = SplitSGD(0.01, PrecisionMode.SPLIT_BF16, lo_bits=8)
    eight.add_dense([lossy])
    drift = []
    for step in range(1, steps + 1):
        g = rng.standard_normal((16, 8)).astype(np.float32) * 1e-2
        fp32.step_dense([g])
        eight.step_dense([g])
        if step % every == 0:
            drift.append(float(np.max(np.abs(eight.master_dense()[0] - exact))))
    return drift


def test_eight_bit_variant_drifts_further_from_fp32_over_time():
    drift = _max_drift_at_checkpoints()
    assert len(drift) == 4
    assert drift[0] > 0
    assert all(b > a for a, b in zip(drift, drift[1:]))
    assert drift[-1] > 2 * drift[0]


def test_split_storage_costs_the_same_as_fp32():
    assert (_run_trajectory(PrecisionMode.FP32, steps=0).parameter_bytes()
            == _run_trajectory(PrecisionMode.SPLIT_BF16, steps=0).parameter_bytes())


def test_split_registration_allocates_no_parameter_storage():
    rng = np.random.default_rng(3)
    table = EmbeddingTable(rng.standard_normal((1000, 16)).astype(np.float32))
    opt = SplitSGD(0.01, PrecisionMode.SPLIT_BF16)
    tracemalloc.start()
    try:
        before, _ = tracemalloc.get_traced_memory()
        opt.add_table(0, table)
        after, _ = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert after - before < table.nbytes // 4
    assert opt.parameter_bytes() == table.nbytes == 1000 * 16 * 4
    assert opt.table_states[0].nbytes == table.nbytes


def test_duplicate_registration_is_rejected(rng):
    w = rng.standard_normal((3, 3)).astype(np.float32)
    table = EmbeddingTable(rng.standard_normal((4, 3)).astype(np.float32))
    opt = SplitSGD(0.1)
    opt.add_dense([w])
    with pytest.raises(DuplicateParameterError):
        opt.add_dense([w])
    with pytest.raises(DuplicateParameterError):
        opt.add_dense([w[1:]])
    opt.add_table(0, table)
    with pytest.raises(DuplicateParameterError):
        opt.add_table(0, EmbeddingTable(np.zeros((2, 3), dtype=np.float32)))
    with pytest.raises(DuplicateParameterError):
        opt.add_table(1, table)


def test_step_argument_checks(rng):
    opt = SplitSGD(0.1)
    opt.add_dense([np.zeros(3, dtype=np.float32)])
    with pytest.raises(OptimizerError):
        opt.step_dense([])
    with pytest.raises(OptimizerError):
        opt.step_sparse(7, SparseGrad(np.array([0]), np.ones((1, 3), dtype=np.float32)))


def test_split_mode_needs_state():
    p = np.ones(2, dtype=np.float32)
    with pytest.raises(OptimizerError):
        sgd_step_dense(p, np.ones(2, dtype=np.float32), 0.1, PrecisionMode.SPLIT_BF16)
    table = EmbeddingTable(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(OptimizerError):
        sgd_step_sparse(table, SparseGrad(np.array([0]), np.ones((1, 2), dtype=np.float32)),
                        0.1, PrecisionMode.SPLIT_BF16)


def test_plain_sgd_step():
    p = np.array([1.0, 2.0], dtype=np.float32)
    sgd_step_dense(p, np.array([1.0, -1.0], dtype=np.float32), 0.5)
    np.testing.assert_array_equal(p, [0.5, 2.5])
