"""Benchmark runner checks on small configs."""

import socket

import pytest

from src.bench import runner
from src.bench.report import ByteCheck, IterationReport, RunSpec, Stats
from src.bench.runner import check_feasible, required_memory_bytes, run_benchmark
from src.core.config import CommVariant, PrecisionMode, ScalingMode, TransportKind
from src.core.errors import ConfigError, InfeasibleConfigError, InvariantViolation
from src.bench.presets import get_preset


def _spec(**kwargs):
    base = dict(config="tiny", ranks=1, iters=3, warmup=1, threads=1)
    base.update(kwargs)
    return RunSpec(**base)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _assert_bytes_match(report: IterationReport):
    assert set(report.bytes) == {"alltoall_fwd", "alltoall_bwd", "allreduce_elements"}
    for name, check in report.bytes.items():
        assert check.matches, f"{name}: predicted {check.predicted}, measured {check.measured}"


def test_single_rank_report():
    report = run_benchmark(_spec())

    assert report.world_size == 1
    assert report.global_n == get_preset("tiny").GN
    assert len(report.loss_trace) == 3
    assert report.iteration_ms.n == 2
    assert {"embedding_fwd", "bottom_fwd", "top_fwd", "top_bwd", "dense_update"} <= set(report.ops)
    assert {"emb_fwd", "emb_bwd", "grad", "metric"} <= set(report.comms)
    assert "barrier" not in report.comms
    assert report.metadata["replicas_identical"]
    assert report.metadata["comm_threads_isolated"]
    assert report.metadata["measured_iterations"] == 2
    assert report.plan["world_size"] == 1
    _assert_bytes_match(report)


@pytest.mark.parametrize("variant", list(CommVariant))
def test_two_rank_report(variant):
    report = run_benchmark(_spec(ranks=2, comm_variant=variant))
    assert report.local_n == [2, 2]
    assert report.metadata["replicas_identical"]
    assert report.comms["grad"].calls == pytest.approx(2.0)
    _assert_bytes_match(report)


def test_weak_scaling_grows_the_global_batch():
    report = run_benchmark(_spec(ranks=2, scaling=ScalingMode.WEAK, blocking=True))
    tiny = get_preset("tiny")
    assert report.global_n == 2 * tiny.LN
    assert report.local_n == [tiny.LN, tiny.LN]
    _assert_bytes_match(report)


def test_report_round_trips_through_json(tmp_path):
    report = run_benchmark(_spec(dtype=PrecisionMode.SPLIT_BF16))
    loaded = IterationReport.load(report.save(tmp_path / "r.json"))
    assert loaded.loss_trace == report.loss_trace
    assert loaded.spec.dtype is PrecisionMode.SPLIT_BF16


def test_infeasible_runs_fail_before_allocation():
    with pytest.raises(InfeasibleConfigError, match="tables"):
        run_benchmark(_spec(ranks=3))
    with pytest.raises(InfeasibleConfigError, match="GiB"):
        run_benchmark(_spec(config="mlperf"))
    with pytest.raises(ConfigError):
        run_benchmark(_spec(config="no-such-config"))


def test_split_planes_add_nothing_to_the_memory_estimate():
    tiny = get_preset("tiny")
    assert required_memory_bytes(tiny, _spec()) == 2 * tiny.table_bytes
    assert required_memory_bytes(tiny, _spec(dtype=PrecisionMode.SPLIT_BF16)) == 2 * tiny.table_bytes
    assert check_feasible(tiny, _spec(ranks=2)).owners == (0, 1)


def _diverge_replicas(report):
    report.metadata["replicas_identical"] = False


def _miscount_bytes(report):
    report.bytes["alltoall_fwd"] = ByteCheck(predicted=1024.0, measured=1028.0)


def _overrun_iteration(report):
    report.ops["top_fwd"] = Stats(mean=10 * report.iteration_ms.mean + 1.0, n=2)


@pytest.mark.parametrize("tamper, message", [
    (_diverge_replicas, "replicas diverged"),
    (_miscount_bytes, "alltoall_fwd"),
    (_overrun_iteration, "exceed iteration"),
])
def test_broken_invariants_fail_the_run(mocker, tamper, message):
    real = runner.build_report

    def tampered(*args, **kwargs):
        report = real(*args, **kwargs)
        tamper(report)
        return report

    mocker.patch.object(runner, "build_report", side_effect=tampered)
    with pytest.raises(InvariantViolation, match=message):
        run_benchmark(_spec(ranks=2))


@pytest.mark.slow
def test_overlap_hides_allreduce_latency():
    common = dict(config="mini-small", ranks=2, iters=4, warmup=1, threads=2,
                  link_latency_us=2000.0)
    blocking = run_benchmark(_spec(blocking=True, **common))
    overlapped = run_benchmark(_spec(blocking=False, **common))
    assert (blocking.exposed_wait_ms["allreduce"].mean
            >= overlapped.exposed_wait_ms["allreduce"].mean)
    assert blocking.exposed_wait_ms["allreduce"].mean >= 4.0
    _assert_bytes_match(overlapped)


@pytest.mark.slow
def test_split_bf16_converges_like_fp32_on_mini_mlperf():
    common = dict(config="mini-mlperf", ranks=1, iters=500, warmup=1, threads=2, lr=0.05)
    fp32 = run_benchmark(_spec(**common))
    bf16 = run_benchmark(_spec(dtype=PrecisionMode.SPLIT_BF16, **common))
    assert len(bf16.loss_trace) == 500
    tail_fp32 = sum(fp32.loss_trace[-10:]) / 10
    tail_bf16 = sum(bf16.loss_trace[-10:]) / 10
    assert tail_bf16 == pytest.approx(tail_fp32, rel=5e-3)


@pytest.mark.slow
def test_tcp_ranks_in_subprocesses():
    report = run_benchmark(_spec(ranks=2, transport=TransportKind.TCP,
                                 rendezvous=f"127.0.0.1:{_free_port()}",
                                 comm_timeout_s=60.0))
    assert report.world_size == 2
    assert report.metadata["replicas_identical"]
    _assert_bytes_match(report)
