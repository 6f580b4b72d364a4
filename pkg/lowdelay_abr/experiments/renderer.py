"""
Sweep report rendering.

A jinja2 template produces a Markdown summary of a results directory,
which is then converted to HTML with python-markdown and wrapped in an
HTML page template.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import markdown
import pandas as pd
from jinja2 import Environment, FileSystemLoader, TemplateNotFound

from .analysis import (
    DEFAULT_OMEGA_THRESHOLDS,
    DEFAULT_SIGMA_GRID,
    MEAN_ROW_ID,
    STATUS_OK,
    compare_frontiers,
    operating_region,
    quality_frontier,
    target_tracking,
)
from .core import load_results

logger = logging.getLogger(__name__)

PACKAGE_TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
MARKDOWN_EXTENSIONS = ["tables"]


def _none_if_nan(value: Any) -> Any:
    return None if isinstance(value, float) and value != value else value


def _records(table: pd.DataFrame) -> list[dict[str, Any]]:
    return [
        {key: _none_if_nan(value) for key, value in row.items()}
        for row in table.to_dict(orient="records")
    ]


class ReportRenderer:
    """
    Jinja2 renderer for sweep reports.

    Markdown templates are rendered without autoescaping; the HTML page
    template autoescapes everything except the converted report body.
    """

    def __init__(self, template_dir: Path | None = None):
        """
        Initialize renderer with template directory.

        Args:
            template_dir: Directory containing report templates; defaults to
                the templates shipped with the package

        Raises:
            FileNotFoundError: If template directory doesn't exist
        """
        template_dir = template_dir or PACKAGE_TEMPLATE_DIR
        if not template_dir.exists():
            raise FileNotFoundError(f"Template directory not found: {template_dir}")

        self.template_dir = template_dir
        self.markdown_env = Environment(
            loader=FileSystemLoader(str(template_dir)),
            autoescape=False,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        self.html_env = Environment(
            loader=FileSystemLoader(str(template_dir)),
            autoescape=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        self.markdown_env.filters["num"] = format_number
        self.html_env.filters["num"] = format_number

    def _render(self, env: Environment, template_name: str, context: dict[str, Any]) -> str:
        try:
            template = env.get_template(template_name)
            return template.render(**context)
        except TemplateNotFound as e:
            raise TemplateNotFound(
                f"Template '{template_name}' not found in {self.template_dir}"
            ) from e

    def render_markdown(self, context: dict[str, Any]) -> str:
        """Render the Markdown summary (report.md.j2)."""
        return self._render(self.markdown_env, "report.md.j2", context)

    def render_html(self, markdown_text: str, title: str) -> str:
        """Convert Markdown to HTML and wrap it in report.html."""
        body = markdown.markdown(markdown_text, extensions=MARKDOWN_EXTENSIONS)
        return self._render(self.html_env, "report.html", {"title": title, "body": body})


def format_number(value: Any, digits: int = 4) -> str:
    """Compact number formatting for report tables; empty for missing values."""
    if value is None or (isinstance(value, float) and value != value):
        return ""
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def build_report_context(
    results: pd.DataFrame,
    sigma_grid: tuple[float, ...] = DEFAULT_SIGMA_GRID,
    omega_thresholds: tuple[float, ...] = DEFAULT_OMEGA_THRESHOLDS,
    title: str = "Sweep report",
) -> dict[str, Any]:
    """Summary numbers, frontiers, comparisons and target tracking for the template."""
    per_trace = results[results["trace_id"] != MEAN_ROW_ID] if not results.empty else results
    algorithms = sorted(set(results["algorithm"])) if not results.empty else []

    summaries = []
    frontiers = []
    for algorithm in algorithms:
        rows = per_trace[per_trace["algorithm"] == algorithm]
        points = operating_region(results, algorithm)
        summaries.append(
            {
                "algorithm": algorithm,
                "label": rows["label"].iloc[0] if len(rows) else algorithm,
                "n_configs": rows["config_id"].nunique(),
                "n_traces": rows["trace_id"].nunique(),
                "n_failed": int((rows["status"] != STATUS_OK).sum()),
                "n_points": len(points),
            }
        )
        frontier = quality_frontier(
            results, sigma_grid, omega_thresholds, algorithm=algorithm
        )
        frontiers.append({"algorithm": algorithm, "rows": _records(frontier)})

    comparisons = []
    if "lolypop" in algorithms:
        for other in (name for name in algorithms if name != "lolypop"):
            table = compare_frontiers(
                results, "lolypop", other, sigma_grid, omega_thresholds
            )
            comparisons.append({"a": "lolypop", "b": other, "rows": _records(table)})

    tracking = target_tracking(results) if "lolypop" in algorithms else pd.DataFrame()
    return {
        "title": title,
        "n_rows": len(results),
        "summaries": summaries,
        "frontiers": frontiers,
        "comparisons": comparisons,
        "tracking": _records(tracking),
    }


def render_report(
    results_dir: Path, template_dir: Path | None = None, title: str = "Sweep report"
) -> tuple[str, str]:
    """
    Render the Markdown and HTML report of a results directory.

    Raises:
        FileNotFoundError: If results.csv or the templates are missing
    """
    results = load_results(results_dir)
    logger.info("Rendering report for %d result rows", len(results))
    renderer = ReportRenderer(template_dir)
    markdown_text = renderer.render_markdown(build_report_context(results, title=title))
    return markdown_text, renderer.render_html(markdown_text, title)
