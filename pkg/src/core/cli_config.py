"""
Command-line argument parsing and configuration overrides for the DLRM training kit.
"""

import argparse
import os
from typing import Any, Dict, Optional

from ..core.config import (
    CommVariant,
    IndexDistribution,
    PrecisionMode,
    ScalingMode,
    Settings,
    TransportKind,
    UpdateStrategy,
    load_settings,
)


class CLIConfig:
    """Command-line configuration parser and override handler."""

    def __init__(self):
        """Initialize the CLI configuration parser."""
        self.parser = self._create_parser()

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create the command-line argument parser."""
        parser = argparse.ArgumentParser(
            prog="dlrm-kit",
            description="Hybrid-parallel DLRM training benchmark on CPU",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
Examples:
  python main.py --config mini-small --iters 20            # Single rank, default settings
  python main.py --config mini-large --ranks 4 --blocking  # Blocking communication breakdown
  python main.py --config mini-mlperf --ranks 2 --comm-variant scatterlist
  python main.py --config small --plan --ranks 2-8         # Cost model only, no allocation
  python main.py --override M=2048 --override E=8 ...      # Patch model keys
  python main.py --compare base.json cand.json             # Scaling table from two reports
  python main.py --list-configs                            # Show every preset

Configuration:
  Settings can be configured via .env file (DLRM_* keys) or command-line arguments.
  Command-line arguments override .env file settings.
  See .env.template for all available configuration options.
"""
        )

        # Basic options
        parser.add_argument(
            "--version",
            action="version",
            version="dlrm-kit 0.1.0"
        )

        parser.add_argument(
            "--debug",
            action="store_true",
            help="Enable debug logging, buffer mutation checks and tracebacks"
        )

        parser.add_argument(
            "--env-file",
            type=str,
            metavar="FILE",
            help="Path to a custom .env configuration file"
        )

        # Model selection
        model_group = parser.add_argument_group("Model Options")
        model_group.add_argument(
            "--config",
            type=str,
            metavar="NAME|PATH",
            help="Preset name or YAML model file (default: mini-small)"
        )

        model_group.add_argument(
            "--override",
            action="append",
            metavar="KEY=VALUE",
            help="Override one model key, e.g. M=4096 or bottom_mlp=13-64-16 (repeatable)"
        )

        # Run shape
        run_group = parser.add_argument_group("Run Options")
        run_group.add_argument(
            "--ranks",
            type=str,
            metavar="R",
            help="Number of ranks; --plan also accepts a range like 2-8"
        )

        run_group.add_argument(
            "--scaling",
            type=str,
            choices=[m.value for m in ScalingMode],
            help="strong: GN split across ranks, weak: LN per rank"
        )

        run_group.add_argument(
            "--iters",
            type=int,
            metavar="K",
            help="Training iterations including warmup"
        )

        run_group.add_argument(
            "--warmup",
            type=int,
            metavar="W",
            help="Iterations excluded from timing"
        )

        run_group.add_argument(
            "--seed",
            type=int,
            help="Seed for model initialisation and synthetic data"
        )

        run_group.add_argument(
            "--lr",
            type=float,
            help="SGD learning rate"
        )

        run_group.add_argument(
            "--distribution",
            type=str,
            choices=[d.value for d in IndexDistribution],
            help="Synthetic index distribution"
        )

        # Kernels and optimizer
        kernel_group = parser.add_argument_group("Kernel Options")
        kernel_group.add_argument(
            "--threads",
            type=int,
            metavar="T",
            help="Compute threads per rank"
        )

        kernel_group.add_argument(
            "--update-strategy",
            type=str,
            choices=[s.value for s in UpdateStrategy],
            help="Sparse embedding update strategy"
        )

        kernel_group.add_argument(
            "--dtype",
            type=str,
            choices=[p.value for p in PrecisionMode],
            help="Parameter storage: fp32 or split bf16"
        )

        kernel_group.add_argument(
            "--block",
            type=int,
            nargs=3,
            metavar=("BN", "BC", "BK"),
            help="Blocking factors of the MLP kernels"
        )

        # Communication
        comm_group = parser.add_argument_group("Communication Options")
        comm_group.add_argument(
            "--transport",
            type=str,
            choices=[t.value for t in TransportKind],
            help="In-process threads or one TCP process per rank"
        )

        comm_group.add_argument(
            "--comm-variant",
            type=str,
            choices=[v.value for v in CommVariant],
            help="Embedding exchange implementation"
        )

        comm_group.add_argument(
            "--blocking",
            action="store_true",
            help="Run every collective to completion where it is issued"
        )

        comm_group.add_argument(
            "--comm-workers",
            type=int,
            metavar="C",
            help="Threads reserved for communication per rank"
        )

        comm_group.add_argument(
            "--bucket-cap-mb",
            type=float,
            metavar="MB",
            help="Gradient bucket size of the overlapped allreduce"
        )

        comm_group.add_argument(
            "--rank",
            type=int,
            help="Run only this rank of a TCP world"
        )

        comm_group.add_argument(
            "--rendezvous",
            type=str,
            metavar="HOST:PORT",
            help="Rank 0 address for TCP runs"
        )

        comm_group.add_argument(
            "--link-latency-us",
            type=float,
            help="Simulated per-message latency of the in-process transport"
        )

        comm_group.add_argument(
            "--link-bandwidth-gbps",
            type=float,
            help="Simulated per-link bandwidth of the in-process transport"
        )

        # Output and special commands
        out_group = parser.add_argument_group("Output Options")
        out_group.add_argument(
            "--out",
            type=str,
            metavar="FILE",
            help="Write the JSON report here instead of stdout"
        )

        out_group.add_argument(
            "--list-configs",
            action="store_true",
            help="List model presets and exit"
        )

        out_group.add_argument(
            "--plan",
            action="store_true",
            help="Print predicted communication volumes and exit"
        )

        out_group.add_argument(
            "--compare",
            type=str,
            nargs=2,
            metavar=("BASE", "CAND"),
            help="Print speedup and efficiency of CAND over BASE and exit"
        )

        out_group.add_argument(
            "--csv",
            action="store_true",
            help="With --compare, print CSV instead of a table"
        )

        return parser

    def parse_args(self, args: Optional[list] = None) -> argparse.Namespace:
        """Parse command-line arguments."""
        return self.parser.parse_args(args)

    def create_config_overrides(self, args: argparse.Namespace) -> Dict[str, Any]:
        """Create configuration overrides from parsed arguments."""
        overrides = {}

        # Map CLI arguments to settings environment variables
        arg_mapping = {
            'config': 'DLRM_CONFIG',
            'scaling': 'DLRM_SCALING',
            'iters': 'DLRM_ITERS',
            'warmup': 'DLRM_WARMUP',
            'seed': 'DLRM_SEED',
            'lr': 'DLRM_LR',
            'distribution': 'DLRM_DISTRIBUTION',
            'threads': 'DLRM_THREADS',
            'update_strategy': 'DLRM_UPDATE_STRATEGY',
            'dtype': 'DLRM_DTYPE',
            'transport': 'DLRM_TRANSPORT',
            'comm_variant': 'DLRM_COMM_VARIANT',
            'comm_workers': 'DLRM_COMM_WORKERS',
            'bucket_cap_mb': 'DLRM_BUCKET_CAP_MB',
            'rank': 'DLRM_RANK',
            'rendezvous': 'DLRM_RENDEZVOUS',
            'link_latency_us': 'DLRM_LINK_LATENCY_US',
            'link_bandwidth_gbps': 'DLRM_LINK_BANDWIDTH_GBPS',
            'out': 'DLRM_OUT',
        }

        # Process direct mappings
        for arg_name, env_var in arg_mapping.items():
            value = getattr(args, arg_name, None)
            if value is not None:
                overrides[env_var] = str(value)

        # Handle special cases
        ranks = getattr(args, 'ranks', None)
        if ranks is not None:
            overrides['DLRM_RANKS'] = ranks.split('-')[-1]

        if getattr(args, 'debug', False):
            overrides['DLRM_DEBUG'] = 'true'
            overrides['DLRM_LOG_LEVEL'] = 'DEBUG'

        if getattr(args, 'blocking', False):
            overrides['DLRM_BLOCKING'] = 'true'

        block = getattr(args, 'block', None)
        if block:
            for key, value in zip(('DLRM_BLOCK_N', 'DLRM_BLOCK_C', 'DLRM_BLOCK_K'), block):
                overrides[key] = str(value)

        return overrides

    def load_settings_with_overrides(self, args: argparse.Namespace) -> Settings:
        """Load settings with command-line overrides."""
        # Apply environment overrides
        overrides = self.create_config_overrides(args)
        original_values = {}

        for key, value in overrides.items():
            original_values[key] = os.environ.get(key)
            os.environ[key] = value

        try:
            return load_settings(getattr(args, 'env_file', None))
        finally:
            # Restore original environment values
            for key, original_value in original_values.items():
                if original_value is None:
                    os.environ.pop(key, None)
                else:
                    os.environ[key] = original_value


def rank_range(value: Optional[str], default: int) -> range:
    """``"4"`` -> 1..4 and ``"2-8"`` -> 2..8, both inclusive."""
    if not value:
        return range(1, default + 1)
    lo, _, hi = value.partition('-')
    if hi:
        return range(int(lo), int(hi) + 1)
    return range(1, int(lo) + 1)


def parse_cli_args(argv: Optional[list] = None) -> argparse.Namespace:
    """Parse command-line arguments and return the namespace."""
    cli_config = CLIConfig()
    return cli_config.parse_args(argv)


def create_settings_from_cli(args: Optional[argparse.Namespace] = None) -> Settings:
    """Create a settings object from CLI arguments."""
    if args is None:
        args = parse_cli_args()

    cli_config = CLIConfig()
    return cli_config.load_settings_with_overrides(args)
