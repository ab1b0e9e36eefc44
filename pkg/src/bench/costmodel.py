"""
Closed-form communication volumes of hybrid-parallel DLRM training.

The allreduce buffer is every MLP weight and bias and does not depend on
rank count or minibatch. The alltoall volume is ``S * N * E`` FP32 values
summed over all ranks: fixed under strong scaling, growing with the rank
count under weak scaling. All sizes are in bytes unless a name says
otherwise.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence

from ..core.config import ScalingMode
from ..core.errors import ConfigError
from ..model.config import DlrmConfig

FP32_BYTES = 4


def _layer_pairs(sizes: Sequence[int]) -> Iterable[tuple]:
    return zip(sizes[:-1], sizes[1:])


def mlp_parameter_count(sizes: Sequence[int]) -> int:
    """``f_i * f_o + f_o`` summed over the layers of one stack."""
    return sum(fi * fo + fo for fi, fo in _layer_pairs(sizes))


def allreduce_size(config: DlrmConfig) -> int:
    """Elements each rank allreduces per step: all bottom and top MLP parameters."""
    return mlp_parameter_count(config.bottom_mlp) + mlp_parameter_count(config.top_sizes)


def allreduce_bytes(config: DlrmConfig) -> int:
    return allreduce_size(config) * FP32_BYTES


def ring_allreduce_traffic(elements: int, world_size: int) -> int:
    """Bytes sent by all ranks together in a ring allreduce of ``elements``."""
    if world_size <= 1:
        return 0
    return 2 * (world_size - 1) * elements * FP32_BYTES


def alltoall_volume(config: DlrmConfig, global_n: int) -> int:
    """Total embedding exchange payload across ranks for one direction."""
    return config.S * global_n * config.E * FP32_BYTES


def global_batch(config: DlrmConfig, world_size: int, mode: ScalingMode) -> int:
    if ScalingMode(mode) is ScalingMode.STRONG:
        return config.GN
    return config.LN * world_size


def strong_scaling_msg_size(config: DlrmConfig, world_size: int) -> float:
    """Average point-to-point message of the strong-scaling alltoall."""
    if world_size < 1:
        raise ConfigError("world size must be at least 1")
    return alltoall_volume(config, config.GN) / world_size ** 2


def weak_scaling_volume(config: DlrmConfig, world_size: int) -> int:
    if world_size < 1:
        raise ConfigError("world size must be at least 1")
    return alltoall_volume(config, config.LN * world_size)


def table_memory_bytes(config: DlrmConfig) -> int:
    """FP32 bytes needed to hold every embedding table."""
    return config.table_bytes


def max_ranks(config: DlrmConfig) -> int:
    """Whole-table sharding cannot use more ranks than tables."""
    return config.S


@dataclass(frozen=True)
class CommPlan:
    """Predicted communication of one training step at ``world_size`` ranks."""
    config: str
    world_size: int
    mode: str
    global_n: int
    allreduce_elements: int
    allreduce_bytes_per_rank: int
    alltoall_total_bytes: int
    alltoall_msg_bytes: float
    allreduce_traffic_per_rank: float
    alltoall_traffic_per_rank: float
    table_bytes: int

    @property
    def bound(self) -> str:
        """Which collective moves more bytes per rank."""
        if self.world_size == 1:
            return "none"
        if self.alltoall_traffic_per_rank > self.allreduce_traffic_per_rank:
            return "alltoall"
        return "allreduce"

    def as_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["bound"] = self.bound
        return out


def build_plan(config: DlrmConfig, world_size: int,
               mode: ScalingMode = ScalingMode.STRONG) -> CommPlan:
    mode = ScalingMode(mode)
    R = world_size
    gn = global_batch(config, R, mode)
    elements = allreduce_size(config)
    volume = alltoall_volume(config, gn)
    return CommPlan(
        config=config.name,
        world_size=R,
        mode=mode.value,
        global_n=gn,
        allreduce_elements=elements,
        allreduce_bytes_per_rank=elements * FP32_BYTES,
        alltoall_total_bytes=volume,
        alltoall_msg_bytes=volume / R ** 2,
        allreduce_traffic_per_rank=ring_allreduce_traffic(elements, R) / R,
        # every rank keeps 1/R of what it owns and ships the rest
        alltoall_traffic_per_rank=volume * (R - 1) / R ** 2,
        table_bytes=table_memory_bytes(config),
    )


def plan_range(config: DlrmConfig, ranks: Iterable[int],
               mode: ScalingMode = ScalingMode.STRONG) -> List[CommPlan]:
    return [build_plan(config, r, mode) for r in ranks]


def regime_crossover(config: DlrmConfig, mode: ScalingMode = ScalingMode.STRONG,
                     limit: Optional[int] = None) -> Optional[int]:
    """
    First rank count at which a step is allreduce-bound after being
    alltoall-bound at two ranks, or ``None`` if that never happens up to
    ``limit`` (default: one rank per table).
    """
    limit = limit or max_ranks(config)
    if limit < 2 or build_plan(config, 2, mode).bound != "alltoall":
        return None
    for r in range(3, limit + 1):
        if build_plan(config, r, mode).bound == "allreduce":
            return r
    return None
