"""Benchmark harness: presets, synthetic data, cost model, reports and the runner."""

from .costmodel import (
    CommPlan,
    allreduce_size,
    alltoall_volume,
    build_plan,
    max_ranks,
    regime_crossover,
    strong_scaling_msg_size,
    table_memory_bytes,
    weak_scaling_volume,
)
from .presets import list_presets, resolve_config
from .report import IterationReport, RunSpec, ScalingRow, compare_reports
from .runner import run_benchmark
from .synthetic import SyntheticStream, generate_synthetic

__all__ = [
    "CommPlan",
    "IterationReport",
    "RunSpec",
    "ScalingRow",
    "SyntheticStream",
    "allreduce_size",
    "alltoall_volume",
    "build_plan",
    "compare_reports",
    "generate_synthetic",
    "list_presets",
    "max_ranks",
    "regime_crossover",
    "resolve_config",
    "run_benchmark",
    "strong_scaling_msg_size",
    "table_memory_bytes",
    "weak_scaling_volume",
]
