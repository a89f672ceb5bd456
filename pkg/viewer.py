"""
Report viewer with terminal and Markdown output formats.
"""
from typing import List

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from schemas import ReportRecord, VerdictRecord


STATUS_STYLES = {
    "pass": "green",
    "fail": "bold red",
    "skipped": "yellow",
}


def _num(x) -> str:
    if x is None:
        return "-"
    return f"{x:.4g}"


def verdict_table(verdicts: List[VerdictRecord], title: str = "Verdicts") -> Table:
    """Rich table of verdicts, one row per criterion."""
    table = Table(title=title, box=box.ROUNDED, show_lines=False)
    table.add_column("Suite", style="cyan", no_wrap=True)
    table.add_column("Criterion")
    table.add_column("Status", justify="center")
    table.add_column("Measured", justify="right")
    table.add_column("Target", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("N", justify="right", style="dim")

    for v in verdicts:
        style = STATUS_STYLES.get(v.status, "")
        table.add_row(
            v.suite,
            v.criterion,
            f"[{style}]{v.status}[/{style}]",
            _num(v.measured),
            _num(v.target),
            _num(v.tolerance),
            "-" if v.sample_size is None else str(v.sample_size),
        )
    return table


def display_report_rich(report: ReportRecord, console: Console):
    """Display a verify report with Rich formatting."""
    counts = {s: sum(1 for v in report.verdicts if v.status == s) for s in STATUS_STYLES}
    headline = Text()
    headline.append("PASSED" if report.passed else "FAILED", style="bold green" if report.passed else "bold red")
    headline.append(f"   suites: {', '.join(report.suites)}   seed: {report.master_seed}", style="white")
    headline.append(
        f"\n{counts['pass']} pass · {counts['fail']} fail · {counts['skipped']} skipped",
        style="dim",
    )

    console.print()
    console.print(Panel(
        headline,
        title=f"Verification report (schema {report.schema_version})",
        title_align="left",
        border_style="green" if report.passed else "red",
        padding=(1, 2),
    ))
    console.print()
    console.print(verdict_table(report.verdicts))

    failures = [v for v in report.verdicts if v.status == "fail"]
    if failures:
        console.print()
        console.print("[bold red]Failing criteria[/bold red]")
        for v in failures:
            console.print(f"  [red]✗[/red] {v.suite}:{v.criterion}  {v.detail}")

    if report.notes:
        console.print()
        for note in report.notes:
            console.print(f"[dim]{note}[/dim]")


def export_markdown(report: ReportRecord) -> str:
    """Export a verify report to Markdown."""
    lines = []

    lines.append("# Verification report")
    lines.append("")
    lines.append(f"- Result: **{'PASSED' if report.passed else 'FAILED'}**")
    lines.append(f"- Suites: {', '.join(report.suites)}")
    lines.append(f"- Master seed: {report.master_seed}")
    lines.append(f"- Schema version: {report.schema_version}")
    lines.append("")

    lines.append("## Verdicts")
    lines.append("")
    lines.append("| Suite | Criterion | Status | Measured | Target | Tolerance | N |")
    lines.append("|---|---|---|---|---|---|---|")
    for v in report.verdicts:
        n = "-" if v.sample_size is None else str(v.sample_size)
        lines.append(
            f"| {v.suite} | {v.criterion} | {v.status} | {_num(v.measured)} | "
            f"{_num(v.target)} | {_num(v.tolerance)} | {n} |"
        )
    lines.append("")

    failures = [v for v in report.verdicts if v.status == "fail"]
    if failures:
        lines.append("## Failing criteria")
        lines.append("")
        for v in failures:
            lines.append(f"- `{v.suite}:{v.criterion}` {v.detail}".rstrip())
        lines.append("")

    if report.notes:
        lines.append("## Notes")
        lines.append("")
        for note in report.notes:
            lines.append(f"- {note}")
        lines.append("")

    return "\n".join(lines)
