"""Deterministic report rendering: JSON summary, text table, Markdown."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .metrics import AggregateReport

COLUMNS = ("Model", "Accuracy", "Match F1", "P", "R", "Steps", "LIS", "Ord. F1")


def format_percent(x: float) -> str:
    return f"{x * 100:.2f}%"


def format_fraction(x: float) -> str:
    return f"{x:.3f}"


def format_steps(x: float) -> str:
    return f"{x:.2f}"


def aggregate_to_dict(report: AggregateReport) -> dict[str, Any]:
    return {
        "macro_f1": report.macro_f1,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_ordered_f1": report.macro_ordered_f1,
        "mean_lis": report.mean_lis,
        "mean_steps": report.mean_steps,
        "accuracy": report.accuracy,
        "n_examples": report.n_examples,
    }


def table_row(model: str, report: AggregateReport) -> tuple[str, ...]:
    return (
        model,
        format_percent(report.accuracy),
        format_fraction(report.macro_f1),
        format_fraction(report.macro_precision),
        format_fraction(report.macro_recall),
        format_steps(report.mean_steps),
        format_fraction(report.mean_lis),
        format_fraction(report.macro_ordered_f1),
    )


def render_table(rows: list[tuple[str, ...]]) -> str:
    widths = [max(len(COLUMNS[i]), *(len(r[i]) for r in rows)) if rows else len(COLUMNS[i])
              for i in range(len(COLUMNS))]
    lines = [
        "  ".join(COLUMNS[i].ljust(widths[i]) for i in range(len(COLUMNS))).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(COLUMNS))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(COLUMNS))).rstrip())
    return "\n".join(lines) + "\n"


def render_markdown(rows: list[tuple[str, ...]]) -> str:
    lines = [
        "| " + " | ".join(COLUMNS) + " |",
        "|" + "|".join("---" for _ in COLUMNS) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def dump_json(obj: Any) -> str:
    """Canonical JSON bytes: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def emit_report(summary: dict[str, Any], rows: list[tuple[str, ...]],
                out_dir: str | Path, formats: tuple[str, ...] = ("json", "table", "markdown")) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    if "json" in formats:
        path = out_dir / "summary.json"
        path.write_text(dump_json(summary), encoding="utf-8")
        written["json"] = path
    if "table" in formats:
        path = out_dir / "report.txt"
        path.write_text(render_table(rows), encoding="utf-8")
        written["table"] = path
    if "markdown" in formats:
        path = out_dir / "report.md"
        path.write_text(render_markdown(rows), encoding="utf-8")
        written["markdown"] = path
    return written
