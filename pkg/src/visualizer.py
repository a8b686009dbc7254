"""
Visualizer module for the coupled Hamilton-Jacobi solver
Rich tables and panels for the command-line summaries
"""

import io
from typing import Any, Dict, Iterable, Optional, Sequence

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

STATUS_STYLES = {
    "PASS": "bold green",
    "FAIL": "bold red",
    "INFO": "cyan",
    "SKIP": "dim",
}


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class ReportVisualizer:
    """
    Human-facing summaries of runs and audit reports
    Data files never go through here
    """

    def __init__(self, console: Optional[Console] = None, width: Optional[int] = None):
        """
        Initialize visualizer

        Args:
            console: Console to print on (default: a new stdout console)
            width: Fixed console width (optional)
        """
        self.console = console or Console(width=width)

    def print_message(self, message, style=""):
        self.console.print(message, style=style)

    def print_error(self, message):
        """Print an error message"""
        self.console.print(f"[bold red]Error:[/bold red] {message}", markup=True, highlight=False)

    def print_warning(self, message):
        """Print a warning message"""
        self.console.print(f"[bold yellow]Warning:[/bold yellow] {message}")

    def print_info(self, message):
        """Print an info message"""
        self.console.print(f"[bold cyan]Info:[/bold cyan] {message}")

    def summary_panel(self, title: str, values: Dict[str, Any]) -> Panel:
        """Key / value panel, one line per entry"""
        width = max((len(key) for key in values), default=0)
        lines = [f"[bold]{key.ljust(width)}[/bold]  {_format_value(value)}" for key, value in values.items()]
        return Panel("\n".join(lines), title=f"[bold]{title}[/bold]", border_style="cyan", box=box.ROUNDED,
                     expand=False)

    def print_summary(self, title: str, values: Dict[str, Any]):
        self.console.print(self.summary_panel(title, values))

    def table(self, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Table:
        table = Table(title=title, show_header=True, header_style="bold cyan", box=box.SIMPLE)
        for column in columns:
            table.add_column(column)
        for row in rows:
            table.add_row(*(_format_value(value) for value in row))
        return table

    def print_table(self, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
        self.console.print(self.table(title, columns, rows))

    def matrix_table(self, results) -> Table:
        """Pass / fail matrix of battery check results"""
        table = Table(title="Acceptance battery", show_header=True, header_style="bold cyan", box=box.SIMPLE)
        table.add_column("problem", style="yellow")
        table.add_column("check")
        table.add_column("status")
        table.add_column("detail", overflow="fold")
        for result in results:
            style = STATUS_STYLES.get(result.status, "")
            table.add_row(result.problem, result.check, f"[{style}]{result.status}[/{style}]", result.detail)
        return table

    def print_matrix(self, results):
        self.console.print(self.matrix_table(results))


def render_text(renderable, width: int = 120) -> str:
    """Plain-text rendering of a rich object, independent of the terminal"""
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, color_system=None, force_terminal=False, legacy_windows=False)
    console.print(renderable)
    return buffer.getvalue()
