"""
Benchmark run description and per-run report.

Both are pydantic models so they round-trip through JSON with a stable
schema. Timings are in milliseconds and bytes are FP32 payload bytes.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from ..core.config import (
    CommVariant,
    IndexDistribution,
    PrecisionMode,
    ScalingMode,
    Settings,
    TransportKind,
    UpdateStrategy,
)
from ..core.errors import ConfigError, ReportMismatchError

REPORT_SCHEMA_VERSION = 1
TIMER_SLACK = 1.05


class RunSpec(BaseModel):
    """Everything that determines a benchmark run."""

    config: str = "mini-small"
    overrides: Dict[str, str] = Field(default_factory=dict)
    ranks: int = Field(default=1, ge=1)
    scaling: ScalingMode = ScalingMode.STRONG
    transport: TransportKind = TransportKind.INPROC
    comm_variant: CommVariant = CommVariant.ALLTOALL
    update_strategy: UpdateStrategy = UpdateStrategy.RACE_FREE_PARTITIONED
    dtype: PrecisionMode = PrecisionMode.FP32
    blocking: bool = False
    iters: int = Field(default=10, ge=1)
    warmup: int = Field(default=2, ge=0)
    seed: int = 1234
    threads: int = Field(default=2, ge=1)
    comm_workers: int = Field(default=1, ge=1)
    lr: float = 0.1
    distribution: IndexDistribution = IndexDistribution.UNIFORM
    bucket_cap_mb: float = 25.0
    comm_timeout_s: float = 120.0
    link_latency_us: float = 0.0
    link_bandwidth_gbps: float = 0.0
    block_n: int = 32
    block_c: int = 32
    block_k: int = 32
    cache_tile: Optional[int] = None
    lock_stripes: int = 1024
    memory_limit_gb: float = 8.0
    rendezvous: str = "127.0.0.1:29500"
    debug: bool = False

    @classmethod
    def from_settings(cls, settings: Settings,
                      overrides: Optional[Dict[str, str]] = None) -> "RunSpec":
        fields = set(cls.model_fields) - {"overrides"}
        data = {k: getattr(settings, k) for k in fields if hasattr(settings, k)}
        if data["warmup"] >= data["iters"]:
            raise ConfigError("warmup must be smaller than iters")
        return cls(overrides=dict(overrides or {}), **data)


class Stats(BaseModel):
    mean: float = 0.0
    p50: float = 0.0
    p95: float = 0.0
    n: int = 0

    @classmethod
    def of(cls, samples: Sequence[float]) -> "Stats":
        if len(samples) == 0:
            return cls()
        a = np.asarray(samples, dtype=np.float64)
        return cls(mean=float(a.mean()), p50=float(np.percentile(a, 50)),
                   p95=float(np.percentile(a, 95)), n=len(a))


class CommSummary(BaseModel):
    """One collective label, averaged per measured iteration and rank."""
    kind: str
    calls: float = 0.0
    pre_ms: float = 0.0
    wait_ms: float = 0.0
    post_ms: float = 0.0
    bytes_sent: float = 0.0
    payload_bytes: float = 0.0
    messages: float = 0.0
    elements: float = 0.0


class ByteCheck(BaseModel):
    predicted: float
    measured: float

    @property
    def matches(self) -> bool:
        return self.predicted == self.measured


class ScalingRow(BaseModel):
    config: str
    scaling: str
    base_ranks: int
    ranks: int
    base_ms: float
    iteration_ms: float
    speedup: float
    efficiency: float


class IterationReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    spec: RunSpec
    model: Dict[str, Any]
    world_size: int
    global_n: int
    local_n: List[int]
    iteration_ms: Stats
    ops: Dict[str, Stats] = Field(default_factory=dict)
    comms: Dict[str, CommSummary] = Field(default_factory=dict)
    exposed_wait_ms: Dict[str, Stats] = Field(default_factory=dict)
    bytes: Dict[str, ByteCheck] = Field(default_factory=dict)
    loss_trace: List[float] = Field(default_factory=list)
    plan: Dict[str, Any] = Field(default_factory=dict)
    baseline: Optional[ScalingRow] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @property
    def compute_ms(self) -> float:
        return sum(s.mean for s in self.ops.values())

    def timings_consistent(self) -> bool:
        """Phase times must fit inside the iteration time."""
        return self.compute_ms <= self.iteration_ms.mean * TIMER_SLACK

    def violations(self) -> List[str]:
        """Broken correctness invariants of this run, empty when it is sound."""
        found = []
        if not self.metadata.get("replicas_identical", True):
            found.append("dense replicas diverged across ranks")
        for name, check in sorted(self.bytes.items()):
            if not check.matches:
                found.append(f"{name}: predicted {check.predicted}, measured {check.measured}")
        if not self.timings_consistent():
            found.append(f"phase times {self.compute_ms:.3f} ms exceed iteration "
                         f"{self.iteration_ms.mean:.3f} ms")
        return found

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "IterationReport":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ReportMismatchError(f"cannot read report {path}: {e}") from e


def compare_reports(baseline: IterationReport, candidate: IterationReport) -> ScalingRow:
    """
    Speedup and scaling efficiency of ``candidate`` over ``baseline``.

    Speedup compares samples per second, so the same formula covers strong
    scaling (fixed global batch) and weak scaling (batch grows with ranks).
    """
    if baseline.model != candidate.model:
        raise ReportMismatchError(
            f"reports use different models: {baseline.model.get('name')} vs "
            f"{candidate.model.get('name')}"
        )
    if baseline.spec.scaling != candidate.spec.scaling:
        raise ReportMismatchError("cannot compare strong and weak scaling runs")
    base_ms, cand_ms = baseline.iteration_ms.mean, candidate.iteration_ms.mean
    if base_ms <= 0 or cand_ms <= 0:
        raise ReportMismatchError("reports have no measured iterations")
    speedup = (candidate.global_n / cand_ms) / (baseline.global_n / base_ms)
    return ScalingRow(
        config=str(baseline.model.get("name")),
        scaling=baseline.spec.scaling.value,
        base_ranks=baseline.world_size,
        ranks=candidate.world_size,
        base_ms=base_ms,
        iteration_ms=cand_ms,
        speedup=speedup,
        efficiency=speedup / (candidate.world_size / baseline.world_size),
    )


def scaling_csv(rows: Sequence[ScalingRow]) -> str:
    header = list(ScalingRow.model_fields)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row.model_dump().values()))
    return "\n".join(lines) + "\n"


def merge_rank_results(parts: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Order per-rank result dicts (as written by subprocess ranks) by rank."""
    by_rank = sorted(parts, key=lambda p: p["rank"])
    ranks = [p["rank"] for p in by_rank]
    if ranks != list(range(len(ranks))):
        raise ReportMismatchError(f"incomplete rank results: {ranks}")
    return by_rank


def read_rank_result(path: Path) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
