"""
Configuration management for the DLRM training kit.

Handles loading and validation of environment variables and run settings.
Model topologies live in ``src.model.config``; this
module only holds how a run is executed.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class ScalingMode(str, Enum):
    """How the minibatch grows with the rank count."""
    STRONG = "strong"
    WEAK = "weak"


class TransportKind(str, Enum):
    """Transports available to the collective layer."""
    INPROC = "inproc"
    TCP = "tcp"


class CommVariant(str, Enum):
    """Embedding redistribution variants."""
    SCATTER_LIST = "scatterlist"
    FUSED_SCATTER = "fused"
    ALLTOALL = "alltoall"


class UpdateStrategy(str, Enum):
    """Sparse embedding update strategies."""
    ATOMIC_EXCHANGE = "atomic"
    LOCKED_ROW_SIMD = "locked"
    RACE_FREE_PARTITIONED = "racefree"


class PrecisionMode(str, Enum):
    """Parameter storage mode of the optimizer."""
    FP32 = "fp32"
    SPLIT_BF16 = "bf16split"


class IndexDistribution(str, Enum):
    """Index distributions of the synthetic data generator."""
    UNIFORM = "uniform"
    CLUSTERED = "clustered"


class Settings(BaseSettings):
    """Main settings object for a benchmark run."""

    model_config = SettingsConfigDict(
        env_prefix="DLRM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application settings
    app_name: str = "dlrm-kit"
    debug: bool = False

    # Logging settings
    log_level: str = "INFO"
    log_to_file: bool = False
    log_file_path: str = "logs/dlrm-kit.log"
    log_max_size_mb: int = 10
    log_backup_count: int = 5

    # Model selection
    config: str = "mini-small"

    # Run shape
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
    out: Optional[str] = None

    # Tcp launch
    rank: Optional[int] = None
    rendezvous: str = "127.0.0.1:29500"

    # Communication layer
    comm_timeout_s: float = 120.0
    link_latency_us: float = 0.0
    link_bandwidth_gbps: float = 0.0
    bucket_cap_mb: float = 25.0

    # Kernel tuning
    block_n: int = Field(default=32, ge=1)
    block_c: int = Field(default=32, ge=1)
    block_k: int = Field(default=32, ge=1)
    cache_tile: Optional[int] = None
    lock_stripes: int = Field(default=1024, ge=1)

    # Feasibility guard for table allocation
    memory_limit_gb: float = 8.0

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """Validate the log level name."""
        if v.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return v.upper()

    @field_validator("warmup")
    @classmethod
    def validate_warmup(cls, v, info):
        """Warmup iterations must leave at least one measured iteration."""
        iters = info.data.get("iters")
        if iters is not None and v >= iters:
            raise ValueError("warmup must be smaller than iters")
        return v

    @field_validator("rendezvous")
    @classmethod
    def validate_rendezvous(cls, v):
        """Validate a host:port rendezvous address."""
        host, _, port = v.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError("rendezvous must look like host:port")
        return v

    def get_logs_dir(self) -> Path:
        """Get the logs directory path."""
        return Path(self.log_file_path).parent

    def ensure_directories(self) -> None:
        """Ensure all required directories exist."""
        if self.log_to_file:
            self.get_logs_dir().mkdir(parents=True, exist_ok=True)
        if self.out:
            Path(self.out).parent.mkdir(parents=True, exist_ok=True)

    def rendezvous_address(self) -> tuple:
        """Split the rendezvous address into (host, port)."""
        host, _, port = self.rendezvous.rpartition(":")
        return host, int(port)


def load_settings(env_file: Optional[str] = None, **overrides: Any) -> Settings:
    """
    Load settings from environment variables and an optional .env file.

    Args:
        env_file: Optional path to a .env file
        **overrides: Explicit field values that win over the environment

    Returns:
        Loaded settings object
    """
    if env_file:
        settings = Settings(_env_file=env_file, **overrides)
    else:
        settings = Settings(**overrides)

    settings.ensure_directories()
    return settings
