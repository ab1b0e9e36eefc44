"""
Rich rendering of configs, communication plans and benchmark reports.

Everything prints to stderr by default so a JSON report on stdout stays
machine-readable.
"""

from typing import Iterable, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from ..bench.costmodel import CommPlan
from ..bench.report import IterationReport, ScalingRow
from ..model.config import DlrmConfig

MIB = 2 ** 20


def _mib(nbytes: float) -> str:
    return f"{nbytes / MIB:,.2f}"


class ReportConsole:
    """Tables for the CLI's human-readable output."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console(stderr=True)

    def print_configs(self, configs: Iterable[DlrmConfig], feasible: Sequence[str] = ()) -> None:
        table = Table(title="DLRM configurations")
        for col in ("name", "N", "GN", "LN", "P", "S", "E", "M",
                    "bottom MLP", "top MLP", "tables (MiB)"):
            table.add_column(col, justify="right" if col not in ("name",) else "left")
        for cfg in configs:
            name = cfg.name if cfg.name in feasible else f"[dim]{cfg.name}[/dim]"
            table.add_row(
                name, str(cfg.N), str(cfg.GN), str(cfg.LN), str(cfg.P), str(cfg.S),
                str(cfg.E), f"{cfg.M:,}",
                "-".join(map(str, cfg.bottom_mlp)), "-".join(map(str, cfg.top_mlp)),
                _mib(cfg.table_bytes),
            )
        self.console.print(table)

    def print_plans(self, plans: Sequence[CommPlan]) -> None:
        if not plans:
            return
        first = plans[0]
        table = Table(title=f"Communication plan: {first.config} ({first.mode} scaling)")
        for col in ("ranks", "global N", "allreduce (MiB)", "alltoall total (MiB)",
                    "msg (KiB)", "allreduce/rank (MiB)", "alltoall/rank (MiB)", "bound"):
            table.add_column(col, justify="right")
        for p in plans:
            table.add_row(
                str(p.world_size), str(p.global_n), _mib(p.allreduce_bytes_per_rank),
                _mib(p.alltoall_total_bytes), f"{p.alltoall_msg_bytes / 1024:,.1f}",
                _mib(p.allreduce_traffic_per_rank), _mib(p.alltoall_traffic_per_rank),
                p.bound,
            )
        self.console.print(table)

    def print_report(self, report: IterationReport) -> None:
        spec = report.spec
        header = (
            f"{report.model.get('name')}  ranks={report.world_size}  "
            f"{spec.scaling.value}  {spec.comm_variant.value}  "
            f"{'blocking' if spec.blocking else 'overlapped'}  {spec.dtype.value}\n"
            f"iteration {report.iteration_ms.mean:.2f} ms "
            f"(p50 {report.iteration_ms.p50:.2f}, p95 {report.iteration_ms.p95:.2f})  "
            f"final loss {report.loss_trace[-1]:.6f}"
        )
        self.console.print(Panel(header, title="Benchmark", border_style="blue"))

        ops = Table(title="Compute phases (ms)")
        for col in ("phase", "mean", "p50", "p95"):
            ops.add_column(col, justify="right" if col != "phase" else "left")
        for name, s in report.ops.items():
            ops.add_row(name, f"{s.mean:.3f}", f"{s.p50:.3f}", f"{s.p95:.3f}")
        for name, s in report.exposed_wait_ms.items():
            ops.add_row(f"[yellow]wait {name}[/yellow]", f"{s.mean:.3f}",
                        f"{s.p50:.3f}", f"{s.p95:.3f}")
        self.console.print(ops)

        comms = Table(title="Collectives per iteration and rank")
        for col in ("label", "kind", "calls", "pre ms", "wait ms", "post ms", "sent MiB"):
            comms.add_column(col, justify="right" if col not in ("label", "kind") else "left")
        for label, c in report.comms.items():
            comms.add_row(label, c.kind, f"{c.calls:g}", f"{c.pre_ms:.3f}",
                          f"{c.wait_ms:.3f}", f"{c.post_ms:.3f}", _mib(c.bytes_sent))
        self.console.print(comms)

        checks = Table(title="Predicted vs measured")
        for col in ("quantity", "predicted", "measured", "match"):
            checks.add_column(col)
        for name, b in report.bytes.items():
            mark = "[green]yes[/green]" if b.matches else "[red]no[/red]"
            checks.add_row(name, f"{b.predicted:,.0f}", f"{b.measured:,.0f}", mark)
        self.console.print(checks)

    def print_scaling(self, rows: Sequence[ScalingRow]) -> None:
        table = Table(title="Scaling")
        for col in ("config", "mode", "base ranks", "ranks", "base ms", "ms",
                    "speedup", "efficiency"):
            table.add_column(col, justify="right")
        for r in rows:
            table.add_row(r.config, r.scaling, str(r.base_ranks), str(r.ranks),
                          f"{r.base_ms:.2f}", f"{r.iteration_ms:.2f}",
                          f"{r.speedup:.3f}", f"{r.efficiency:.3f}")
        self.console.print(table)

    def print_error(self, message: str) -> None:
        self.console.print(Panel(message, title="Error", border_style="red"))
