"""
DLRM topology configuration.

Keys follow the usual DLRM shorthand:

* ``N``  single-socket minibatch
* ``GN`` global minibatch for strong scaling
* ``LN`` local (per-rank) minibatch for weak scaling
* ``P``  average lookups per table per sample
* ``S``  number of tables, ``E`` embedding width, ``M`` rows per table

``bottom_mlp`` lists every width including the dense input and ``E``;
``top_mlp`` lists the widths after the interaction, ending in 1.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..core.errors import ConfigError


class InteractionKind(str, Enum):
    DOT = "dot"
    CAT = "cat"


class DlrmConfig(BaseModel):
    """One DLRM model configuration."""

    name: str = "custom"
    N: int = Field(ge=1)
    GN: int = Field(ge=1)
    LN: int = Field(ge=1)
    P: int = Field(ge=1)
    S: int = Field(ge=1)
    E: int = Field(ge=1)
    M: int = Field(ge=1)
    bottom_mlp: List[int] = Field(min_length=2)
    top_mlp: List[int] = Field(min_length=1)
    interaction: InteractionKind = InteractionKind.DOT

    @model_validator(mode="after")
    def check_shapes(self) -> "DlrmConfig":
        if self.bottom_mlp[-1] != self.E:
            raise ValueError(
                f"bottom MLP output {self.bottom_mlp[-1]} must equal E={self.E}"
            )
        if self.top_mlp[-1] != 1:
            raise ValueError("top MLP must end in a single output unit")
        if any(w < 1 for w in self.bottom_mlp + self.top_mlp):
            raise ValueError("MLP widths must be positive")
        return self

    @property
    def dense_features(self) -> int:
        return self.bottom_mlp[0]

    @property
    def interaction_width(self) -> int:
        return interaction_width(self.S, self.E, self.interaction)

    @property
    def top_sizes(self) -> List[int]:
        """Top MLP widths including its derived input width."""
        return [self.interaction_width] + list(self.top_mlp)

    @property
    def table_bytes(self) -> int:
        """FP32 bytes of all embedding tables."""
        return self.S * self.M * self.E * 4

    def with_overrides(self, overrides: Mapping[str, Any]) -> "DlrmConfig":
        """Copy with ``KEY=VALUE`` style overrides applied and re-validated."""
        data = self.model_dump()
        for key, value in overrides.items():
            if key not in data:
                raise ConfigError(f"unknown config key: {key}")
            data[key] = _coerce(value)
        return build_config(data)


def interaction_width(S: int, E: int, kind: InteractionKind = InteractionKind.DOT) -> int:
    """Top MLP input width produced by the interaction."""
    if InteractionKind(kind) is InteractionKind.DOT:
        return E + S * (S + 1) // 2
    return E * (S + 1)


def _coerce(value: Any) -> Any:
    if isinstance(value, str):
        if "-" in value and all(p.isdigit() for p in value.split("-")):
            return [int(p) for p in value.split("-")]
        return yaml.safe_load(value)
    return value


def build_config(data: Mapping[str, Any]) -> DlrmConfig:
    try:
        return DlrmConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid DLRM config: {e}") from e


def load_config_file(path: Path) -> DlrmConfig:
    """Read a flat YAML mapping of config keys."""
    path = Path(path)
    try:
        data: Dict[str, Any] = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    data.setdefault("name", path.stem)
    return build_config({k: _coerce(v) for k, v in data.items()})
