"""
Benchmark driver: checks feasibility, launches ranks, trains on synthetic
data and folds the per-rank measurements into one report.

In-process runs host every rank on its own thread. TCP runs either join a
world as a single rank (``rank`` given) or spawn one subprocess per rank
and merge the result files they write.
"""

import argparse
import hashlib
import json
import subprocess
import sys
import tempfile
import time
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..comms.collectives import barrier
from ..comms.context import RankContext
from ..comms.errors import CommError
from ..comms.launcher import connect_tcp, launch_inprocess
from ..comms.redistribute import BWD_LABEL, FWD_LABEL
from ..comms.transport import LinkModel
from ..core.config import TransportKind
from ..core.errors import InfeasibleConfigError, InvariantViolation
from ..core.logging_config import get_logger, log_call, quiet_logging
from ..core.timing import PhaseTimer
from ..kernels.mlp import KernelConfig
from ..model.config import DlrmConfig
from ..model.dlrm import DLRM
from ..model.parallel import (
    GRAD_LABEL,
    DistributedStepStats,
    ShardError,
    TableShard,
    replica_fingerprint,
    train_step_distributed,
)
from ..optim.split_sgd import SplitSGD
from .costmodel import alltoall_volume, allreduce_size, build_plan, global_batch
from .presets import resolve_config
from .report import ByteCheck, CommSummary, IterationReport, RunSpec, Stats, merge_rank_results
from .synthetic import SyntheticStream

logger = get_logger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[2]

DATA_NOTE = (
    "each rank generates its own sample slice and the global lookups of the "
    "tables it owns; no rank reads the full global minibatch"
)


def required_memory_bytes(config: DlrmConfig, spec: RunSpec) -> int:
    """
    Tables of the trained model and of the label model.

    Split BF16 planes alias the trained tables, so ``spec.dtype`` adds nothing.
    """
    return config.table_bytes * 2


def check_feasible(config: DlrmConfig, spec: RunSpec) -> TableShard:
    """Reject a run before anything large is allocated."""
    try:
        shard = TableShard.round_robin(config.S, spec.ranks)
    except ShardError as e:
        raise InfeasibleConfigError(str(e)) from e
    need = required_memory_bytes(config, spec)
    limit = spec.memory_limit_gb * 2 ** 30
    if need > limit:
        raise InfeasibleConfigError(
            f"config '{config.name}' needs {need / 2 ** 30:.1f} GiB for embedding tables "
            f"({config.table_bytes / 2 ** 30:.1f} GiB per copy) but the limit is "
            f"{spec.memory_limit_gb:g} GiB"
        )
    return shard


def kernel_config(spec: RunSpec) -> KernelConfig:
    return KernelConfig(block_n=spec.block_n, block_c=spec.block_c,
                        block_k=spec.block_k, cache_tile=spec.cache_tile)


def run_rank(ctx: RankContext, spec: RunSpec, config: DlrmConfig,
             stream: SyntheticStream) -> Dict[str, Any]:
    """Train ``spec.iters`` steps on one rank and return raw measurements."""
    R = ctx.world_size
    shard = TableShard.round_robin(config.S, R)
    owned = shard.owned(ctx.rank)
    model = DLRM.create(config, spec.seed, owned, kernel_config(spec))
    optimizer = SplitSGD(spec.lr, spec.dtype, spec.update_strategy, nthreads=spec.threads,
                         pool=ctx.compute, lock_stripes=spec.lock_stripes)
    model.register(optimizer)

    phases: Dict[str, List[float]] = defaultdict(list)
    exposed: Dict[str, List[float]] = defaultdict(list)
    iteration_ms: List[float] = []
    losses: List[float] = []
    for it in range(spec.iters):
        batch = stream.rank_batch(it, ctx.rank, R, owned)
        if it == spec.warmup:
            ctx.trace.clear()
        _sync(ctx)
        timer, stats = PhaseTimer(), DistributedStepStats()
        start = time.perf_counter()
        loss = train_step_distributed(ctx, model, batch, optimizer, shard,
                                      spec.comm_variant, spec.blocking,
                                      spec.bucket_cap_mb, timer, stats)
        elapsed = (time.perf_counter() - start) * 1e3
        losses.append(loss)
        if it < spec.warmup:
            continue
        iteration_ms.append(elapsed)
        for name, ms in timer.snapshot().items():
            phases[name].append(ms)
        exposed["allreduce"].append(stats.allreduce_wait_ms)
        exposed["exchange_fwd"].append(stats.exchange_fwd_wait_ms)
        exposed["exchange_bwd"].append(stats.exchange_bwd_wait_ms)
        if ctx.rank == 0:
            logger.info("iteration", it=it, loss=round(loss, 6), ms=round(elapsed, 2),
                        buckets=stats.buckets)

    records = [r for r in ctx.trace.as_dicts() if r["label"] != "barrier"]
    return {
        "rank": ctx.rank,
        "local_n": len(batch.labels),
        "iteration_ms": iteration_ms,
        "phases": dict(phases),
        "exposed": dict(exposed),
        "losses": losses,
        "records": records,
        "fingerprint": hashlib.sha256(replica_fingerprint(model).tobytes()).hexdigest(),
        "comm_threads_isolated": not (ctx.comm_thread_idents() & ctx.compute.thread_idents()),
    }


def _sync(ctx: RankContext) -> None:
    if ctx.world_size > 1:
        barrier(ctx)


def _per_iteration(values: Sequence[Sequence[float]], reduce) -> List[float]:
    """Combine ``values[rank][iteration]`` across ranks for every iteration."""
    return [float(reduce(col)) for col in zip(*values)]


def _comm_summaries(results: Sequence[Dict[str, Any]], measured: int) -> Dict[str, CommSummary]:
    grouped: Dict[str, List[Dict[str, Any]]] = defaultdict(list)
    for res in results:
        for rec in res["records"]:
            grouped[rec["label"]].append(rec)
    scale = 1.0 / (measured * len(results))
    out = {}
    for label, recs in sorted(grouped.items()):
        out[label] = CommSummary(
            kind=recs[0]["kind"],
            calls=len(recs) * scale,
            **{k: sum(r[k] for r in recs) * scale
               for k in ("pre_ms", "wait_ms", "post_ms", "bytes_sent",
                         "payload_bytes", "messages", "elements")},
        )
    return out


def _label_total(results: Sequence[Dict[str, Any]], label: str, attr: str) -> float:
    return sum(r[attr] for res in results for r in res["records"] if r["label"] == label)


def build_report(spec: RunSpec, config: DlrmConfig, results: Sequence[Dict[str, Any]],
                 global_n: int) -> IterationReport:
    results = merge_rank_results(results)
    R = len(results)
    measured = spec.iters - spec.warmup

    phase_names = sorted({p for res in results for p in res["phases"]})
    ops = {name: Stats.of(_per_iteration([res["phases"].get(name, [0.0] * measured)
                                          for res in results], np.mean))
           for name in phase_names}
    exposed = {name: Stats.of(_per_iteration([res["exposed"][name] for res in results], np.mean))
               for name in results[0]["exposed"]}

    # alltoall payload summed over ranks; allreduce elements as seen by one rank
    checks = {
        "alltoall_fwd": ByteCheck(
            predicted=alltoall_volume(config, global_n),
            measured=_label_total(results, FWD_LABEL, "payload_bytes") / measured,
        ),
        "alltoall_bwd": ByteCheck(
            predicted=alltoall_volume(config, global_n),
            measured=_label_total(results, BWD_LABEL, "payload_bytes") / measured,
        ),
        "allreduce_elements": ByteCheck(
            predicted=allreduce_size(config),
            measured=_label_total(results[:1], GRAD_LABEL, "elements") / measured,
        ),
    }

    fingerprints = {res["fingerprint"] for res in results}
    report = IterationReport(
        spec=spec,
        model=config.model_dump(mode="json"),
        world_size=R,
        global_n=global_n,
        local_n=[res["local_n"] for res in results],
        iteration_ms=Stats.of(_per_iteration([res["iteration_ms"] for res in results], np.max)),
        ops=ops,
        comms=_comm_summaries(results, measured),
        exposed_wait_ms=exposed,
        bytes=checks,
        loss_trace=results[0]["losses"],
        plan=build_plan(config, R, spec.scaling).as_dict(),
        metadata={
            "data_generation": DATA_NOTE,
            "replicas_identical": len(fingerprints) == 1,
            "comm_threads_isolated": all(res["comm_threads_isolated"] for res in results),
            "measured_iterations": measured,
        },
    )
    report.metadata["timings_consistent"] = report.timings_consistent()
    return report


def _inprocess(spec: RunSpec, config: DlrmConfig, stream: SyntheticStream) -> List[Dict[str, Any]]:
    link = LinkModel(spec.link_latency_us, spec.link_bandwidth_gbps)
    return launch_inprocess(
        spec.ranks,
        lambda ctx: run_rank(ctx, spec, config, stream),
        comm_workers=spec.comm_workers,
        compute_threads=spec.threads,
        link=link,
        timeout_s=spec.comm_timeout_s,
        debug=spec.debug,
    )


def _host_port(rendezvous: str) -> tuple:
    host, _, port = rendezvous.rpartition(":")
    return host, int(port)


def run_tcp_rank(spec: RunSpec, rank: int) -> Dict[str, Any]:
    """Join the TCP world as ``rank`` and train; returns that rank's measurements."""
    config = resolve_config(spec.config, spec.overrides)
    check_feasible(config, spec)
    stream = SyntheticStream(config, global_batch(config, spec.ranks, spec.scaling),
                             spec.seed, spec.distribution)
    ctx = connect_tcp(rank, spec.ranks, _host_port(spec.rendezvous),
                      comm_workers=spec.comm_workers, compute_threads=spec.threads,
                      timeout_s=spec.comm_timeout_s, debug=spec.debug)
    try:
        return run_rank(ctx, spec, config, stream)
    finally:
        ctx.close()


def _spawn_tcp(spec: RunSpec) -> List[Dict[str, Any]]:
    with tempfile.TemporaryDirectory(prefix="dlrm-ranks-") as tmp:
        spec_file = Path(tmp) / "spec.json"
        spec_file.write_text(spec.model_dump_json(), encoding="utf-8")
        procs = []
        for r in range(spec.ranks):
            out = Path(tmp) / f"rank{r}.json"
            cmd = [sys.executable, "-m", "src.bench.runner",
                   "--spec-file", str(spec_file), "--rank", str(r), "--result", str(out)]
            procs.append((r, out, subprocess.Popen(cmd, cwd=PROJECT_ROOT,
                                                   stderr=subprocess.PIPE, text=True)))
        failed = []
        for r, _, proc in procs:
            _, err = proc.communicate()
            if proc.returncode != 0:
                failed.append(f"rank {r} exited with {proc.returncode}: {err.strip()[-500:]}")
        if failed:
            raise CommError("; ".join(failed))
        return [json.loads(out.read_text(encoding="utf-8")) for _, out, _ in procs]


def check_invariants(report: IterationReport) -> None:
    """Raise ``InvariantViolation`` if the report shows a broken run."""
    problems = report.violations()
    if problems:
        for problem in problems:
            logger.error("invariant violated", problem=problem)
        raise InvariantViolation("; ".join(problems))


@log_call(logger)
def run_benchmark(spec: RunSpec) -> IterationReport:
    """Run ``spec`` end to end and return its report."""
    config = resolve_config(spec.config, spec.overrides)
    check_feasible(config, spec)
    global_n = global_batch(config, spec.ranks, spec.scaling)
    logger.info("starting benchmark", config=config.name, ranks=spec.ranks,
                scaling=spec.scaling.value, global_n=global_n,
                transport=spec.transport.value, variant=spec.comm_variant.value,
                blocking=spec.blocking, dtype=spec.dtype.value)

    if spec.transport is TransportKind.INPROC:
        stream = SyntheticStream(config, global_n, spec.seed, spec.distribution)
        results = _inprocess(spec, config, stream)
    else:
        results = _spawn_tcp(spec)

    report = build_report(spec, config, results, global_n)
    check_invariants(report)
    logger.info("benchmark finished", iteration_ms=round(report.iteration_ms.mean, 2),
                final_loss=report.loss_trace[-1])
    return report


def worker_main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of one spawned TCP rank."""
    parser = argparse.ArgumentParser(description="Run one TCP benchmark rank")
    parser.add_argument("--spec-file", required=True)
    parser.add_argument("--rank", type=int, required=True)
    parser.add_argument("--result", required=True)
    args = parser.parse_args(argv)

    quiet_logging()
    spec = RunSpec.model_validate_json(Path(args.spec_file).read_text(encoding="utf-8"))
    result = run_tcp_rank(spec, args.rank)
    Path(args.result).write_text(json.dumps(result), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(worker_main())
