"""Tests for the in-process collective layer."""

import time

import numpy as np
import pytest

from src.comms.collectives import allreduce, alltoall, barrier, chunk_bounds, gather, scatter
from src.comms.context import wait
from src.comms.errors import (
    BufferMutatedError,
    CollectiveAbortedError,
    CommTimeoutError,
    ForeignHandleError,
    LengthMismatchError,
)
from src.comms.frames import Frame, FrameKind, decode_header, decode_payload, encode_frame, HEADER_SIZE
from src.comms.launcher import launch_inprocess, make_inprocess_world
from src.comms.mailbox import Mailbox
from src.comms.transport import InProcessFabric, LinkModel
from src.kernels.mlp import init_mlp, mlp_forward

WORLD_SIZES = [1, 2, 3, 4]


def test_chunk_bounds_spread_the_remainder():
    assert chunk_bounds(10, 4) == [(0, 3), (3, 6), (6, 8), (8, 10)]
    assert chunk_bounds(2, 4) == [(0, 1), (1, 2), (2, 2), (2, 2)]


@pytest.mark.parametrize("R", WORLD_SIZES)
@pytest.mark.parametrize("length", [1, 10, 33])
def test_allreduce_sums_across_ranks(R, length):
    def fn(ctx):
        buf = np.arange(length, dtype=np.float32) + ctx.rank
        allreduce(ctx, buf)
        return buf

    expected = R * np.arange(length, dtype=np.float32) + sum(range(R))
    for got in launch_inprocess(R, fn):
        np.testing.assert_array_equal(got, expected)


@pytest.mark.parametrize("R", [2, 4])
def test_nonblocking_allreduce_writes_on_wait(R):
    def fn(ctx):
        buf = np.full((2, 3), float(ctx.rank + 1), dtype=np.float32)
        handle = allreduce(ctx, buf, blocking=False, average=True)
        untouched = buf.copy()
        timings = wait(ctx, handle)
        return untouched, buf, timings, handle.state

    mean = sum(range(1, R + 1)) / R
    for rank, (untouched, buf, timings, state) in enumerate(launch_inprocess(R, fn)):
        assert np.all(untouched == rank + 1)
        np.testing.assert_allclose(buf, np.full((2, 3), mean))
        assert set(timings) == {"pre_ms", "wait_ms", "post_ms"}
        assert state == "complete"


def test_concurrent_collectives_complete_in_any_wait_order():
    def fn(ctx):
        a = np.full(5, ctx.rank, dtype=np.float32)
        b = np.full(7, 10 * ctx.rank, dtype=np.float32)
        ha = allreduce(ctx, a, blocking=False)
        hb = allreduce(ctx, b, blocking=False)
        hb.wait()
        ha.wait()
        return a, b

    for a, b in launch_inprocess(3, fn, comm_workers=2):
        np.testing.assert_array_equal(a, np.full(5, 3.0))
        np.testing.assert_array_equal(b, np.full(7, 30.0))


@pytest.mark.parametrize("R", WORLD_SIZES)
def test_alltoall_personalized_exchange(R):
    def fn(ctx):
        r = ctx.rank
        send = [np.full(j + r + 1, 10 * r + j, dtype=np.float32) for j in range(R)]
        sizes = [r + j + 1 for j in range(R)]
        return alltoall(ctx, send, recv_sizes=sizes).wait()

    for r, recv in enumerate(launch_inprocess(R, fn)):
        for j, seg in enumerate(recv):
            np.testing.assert_array_equal(seg, np.full(r + j + 1, 10 * j + r))


def test_alltoall_checks_segment_count_and_sizes():
    def wrong_count(ctx):
        alltoall(ctx, [np.zeros(1)])

    with pytest.raises(LengthMismatchError):
        launch_inprocess(2, wrong_count, timeout_s=5)

    def wrong_size(ctx):
        alltoall(ctx, [np.zeros(2), np.zeros(2)], recv_sizes=[2, 3])

    with pytest.raises(LengthMismatchError):
        launch_inprocess(2, wrong_size, timeout_s=5)


@pytest.mark.parametrize("R", [1, 3])
def test_scatter_and_gather(R):
    def fn(ctx):
        segs = [np.full(j + 1, j, dtype=np.float32) for j in range(R)] if ctx.rank == 1 % R else None
        mine = scatter(ctx, 1 % R, segs).wait()
        gathered = gather(ctx, 0, mine * 2).wait()
        return mine, gathered

    results = launch_inprocess(R, fn)
    for r, (mine, gathered) in enumerate(results):
        np.testing.assert_array_equal(mine, np.full(r + 1, r))
        if r == 0:
            for j, seg in enumerate(gathered):
                np.testing.assert_array_equal(seg, np.full(j + 1, 2 * j))
        else:
            assert gathered is None


def test_barrier_and_trace():
    def fn(ctx):
        barrier(ctx)
        allreduce(ctx, np.ones(8, dtype=np.float32), label="grad")
        return ctx.trace.count(label="grad"), ctx.trace.total("bytes_sent", label="grad")

    for count, sent in launch_inprocess(4, fn):
        assert count == 1
        # ring allreduce of 8 elements over 4 ranks: 2 * 3 chunks of 2 elements
        assert sent == 2 * 3 * 2 * 4


def test_ring_sends_two_messages_per_step(mocker):
    spy = mocker.spy(InProcessFabric, "transmit")
    R = 4
    launch_inprocess(R, lambda ctx: allreduce(ctx, np.ones(12, dtype=np.float32)))
    assert spy.call_count == R * 2 * (R - 1)


def test_receive_times_out():
    def fn(ctx):
        if ctx.rank == 0:
            allreduce(ctx, np.ones(4, dtype=np.float32))

    with pytest.raises(CommTimeoutError):
        launch_inprocess(2, fn, timeout_s=0.2)


def test_failure_on_one_rank_aborts_peers():
    seen = {}

    def fn(ctx):
        if ctx.rank == 1:
            raise ValueError("bad input on rank 1")
        try:
            allreduce(ctx, np.ones(4, dtype=np.float32))
        except CollectiveAbortedError as e:
            seen["origin"] = e.origin
            raise

    with pytest.raises(ValueError, match="bad input"):
        launch_inprocess(2, fn, timeout_s=30)
    assert seen["origin"] == 1


def test_waiting_on_a_foreign_handle_is_rejected():
    (ctx_a,) = make_inprocess_world(1)
    (ctx_b,) = make_inprocess_world(1)
    try:
        handle = allreduce(ctx_a, np.ones(2, dtype=np.float32))
        with pytest.raises(ForeignHandleError):
            wait(ctx_b, handle)
    finally:
        ctx_a.close()
        ctx_b.close()


def test_debug_mode_detects_mutated_buffers():
    (ctx,) = make_inprocess_world(1, debug=True)
    try:
        buf = np.ones(4, dtype=np.float32)
        handle = allreduce(ctx, buf, blocking=False)
        buf[0] = 99.0
        with pytest.raises(BufferMutatedError):
            handle.wait()
    finally:
        ctx.close()


def test_comm_threads_never_run_compute():
    def fn(ctx):
        ctx.compute.map_partitions(4, lambda a, b: None, parts=2)
        allreduce(ctx, np.ones(3, dtype=np.float32), blocking=False).wait()
        return not (ctx.comm_thread_idents() & ctx.compute.thread_idents())

    assert all(launch_inprocess(2, fn, compute_threads=2))


def test_link_model_delays_delivery():
    link = LinkModel(latency_us=0.0, bandwidth_gbps=8.0)
    assert link.enabled
    assert link.transfer_s(1_000_000) == pytest.approx(1e-3)
    assert not LinkModel().enabled

    results = launch_inprocess(2, lambda ctx: allreduce(ctx, np.ones(64, dtype=np.float32)).wait(),
                               link=LinkModel(latency_us=50.0))
    for r in results:
        np.testing.assert_array_equal(r, np.full(64, 2.0))


def test_mailbox_matches_tags_out_of_order():
    box = Mailbox(0)
    box.deliver(Frame(2, FrameKind.ALLREDUCE, 1, 0, 0, np.array([2.0], dtype=np.float32)))
    box.deliver(Frame(1, FrameKind.ALLREDUCE, 1, 0, 0, np.array([1.0], dtype=np.float32)))

    assert box.receive(1, 1, 0, FrameKind.ALLREDUCE, timeout=1).payload[0] == 1.0
    assert box.receive(1, 2, 0, FrameKind.ALLREDUCE, timeout=1).payload[0] == 2.0
    assert box.pending() == 0


def test_frame_header_layout():
    frame = Frame(7, FrameKind.ALLTOALL, 2, 3, 5, np.arange(3, dtype=np.float32))
    raw = encode_frame(frame)
    assert HEADER_SIZE == 16
    assert decode_header(raw[:HEADER_SIZE]) == (7, FrameKind.ALLTOALL, 2, 3, 5, 12)
    np.testing.assert_array_equal(decode_payload(FrameKind.ALLTOALL, raw[HEADER_SIZE:]),
                                  [0.0, 1.0, 2.0])


def test_exchange_does_not_queue_behind_a_pending_allreduce():
    R = 4

    def fn(ctx):
        big = np.ones(262_144, dtype=np.float32)
        start = time.perf_counter()
        reduce = allreduce(ctx, big, blocking=False)
        exchange = alltoall(ctx, [np.full(4, ctx.rank, dtype=np.float32)] * R, blocking=False)
        recv = exchange.wait()
        exchange_ms = (time.perf_counter() - start) * 1e3
        reduce_pending = not reduce.ready
        reduce.wait()
        reduce_ms = (time.perf_counter() - start) * 1e3
        return recv, big, exchange_ms, reduce_ms, reduce_pending

    # 1 MiB through a 0.05 Gbps ring takes about 250 ms
    results = launch_inprocess(R, fn, link=LinkModel(bandwidth_gbps=0.05))
    for recv, big, exchange_ms, reduce_ms, reduce_pending in results:
        for j, seg in enumerate(recv):
            np.testing.assert_array_equal(seg, np.full(4, float(j)))
        np.testing.assert_array_equal(big, np.full(262_144, float(R)))
        assert reduce_pending
        assert exchange_ms < 0.5 * reduce_ms


@pytest.mark.slow
def test_compute_keeps_its_pace_while_an_allreduce_is_in_flight():
    def fn(ctx):
        rng = np.random.default_rng(ctx.rank)
        net = init_mlp([128, 128, 128], rng)
        X = rng.standard_normal((128, 128)).astype(np.float32)

        def compute_ms() -> float:
            start = time.perf_counter()
            for _ in range(3):
                mlp_forward(net, X, ctx.compute)
            return (time.perf_counter() - start) * 1e3

        compute_ms()
        alone = min(compute_ms() for _ in range(5))
        # 16 MiB at 0.05 Gbps keeps the ring busy for several seconds
        handle = allreduce(ctx, np.ones(4 * 1_048_576, dtype=np.float32), blocking=False)
        shared = min(compute_ms() for _ in range(5))
        overlapped = not handle.ready
        handle.wait()
        return alone, shared, overlapped

    for alone, shared, overlapped in launch_inprocess(2, fn, compute_threads=2,
                                                      link=LinkModel(bandwidth_gbps=0.05)):
        assert overlapped
        assert shared < 1.1 * alone
