"""
Named DLRM configurations.

``small``, ``large`` and ``mlperf`` are the published cluster-scale
topologies. The ``mini-*`` variants keep the table count and the shape of
the MLP stacks but shrink rows and widths so they train on one machine.
``tiny`` exists for gradient checks.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from ..core.errors import ConfigError
from ..model.config import DlrmConfig, build_config, load_config_file

PRESETS: Dict[str, Dict[str, Any]] = {
    "small": dict(
        N=2048, GN=8192, LN=1024, P=50, S=8, E=64, M=1_000_000,
        bottom_mlp=[512, 512, 64], top_mlp=[1024, 1024, 1024, 1],
    ),
    "large": dict(
        N=2048, GN=16384, LN=512, P=100, S=64, E=256, M=6_000_000,
        bottom_mlp=[2048] + [2048] * 7 + [256], top_mlp=[4096] * 15 + [1],
    ),
    "mlperf": dict(
        N=2048, GN=16384, LN=2048, P=1, S=26, E=128, M=40_000_000,
        bottom_mlp=[13, 512, 256, 128], top_mlp=[512, 512, 256, 1],
    ),
    "mini-small": dict(
        N=256, GN=512, LN=128, P=10, S=8, E=16, M=10_000,
        bottom_mlp=[128, 128, 16], top_mlp=[256, 256, 256, 1],
    ),
    "mini-large": dict(
        N=256, GN=512, LN=128, P=16, S=64, E=16, M=4096,
        bottom_mlp=[128] * 8 + [16], top_mlp=[128] * 15 + [1],
    ),
    "mini-mlperf": dict(
        N=256, GN=512, LN=128, P=1, S=26, E=16, M=10_000,
        bottom_mlp=[13, 64, 32, 16], top_mlp=[64, 64, 32, 1],
    ),
    "tiny": dict(
        N=4, GN=4, LN=4, P=2, S=2, E=4, M=8,
        bottom_mlp=[3, 5, 4], top_mlp=[6, 1],
    ),
}

# Too big to allocate on a workstation; only the cost model uses them.
CLUSTER_SCALE = ("small", "large", "mlperf")


def list_presets() -> List[str]:
    return list(PRESETS)


def get_preset(name: str) -> DlrmConfig:
    try:
        data = PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown config '{name}'; choose one of {', '.join(PRESETS)} or a YAML path"
        ) from None
    return build_config({"name": name, **data})


def resolve_config(name_or_path: str, overrides: Optional[Mapping[str, Any]] = None) -> DlrmConfig:
    """
    Turn a preset name or a YAML path into a validated config.

    Args:
        name_or_path: Preset name, or path to a flat YAML file
        overrides: ``KEY -> VALUE`` patches applied on top

    Returns:
        The resolved DlrmConfig
    """
    if name_or_path in PRESETS:
        config = get_preset(name_or_path)
    elif Path(name_or_path).suffix in (".yaml", ".yml") or Path(name_or_path).exists():
        config = load_config_file(Path(name_or_path))
    else:
        config = get_preset(name_or_path)
    if overrides:
        config = config.with_overrides(overrides)
    return config


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    """Parse ``KEY=VALUE`` strings from the command line."""
    out: Dict[str, str] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like KEY=VALUE, got '{pair}'")
        out[key.strip()] = value.strip()
    return out
