"""Binary classification metrics at sentence, study, and bag level, run
averaging, and table rendering.

The positive class is label 1 (study mentions EQ-5D). Precision and recall
fall back to 0 when their denominator is zero; the report flags when that
happened. Values are stored at full precision and rounded to two decimals
only at render time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

LEVELS = ("sentence", "study", "bag")


@dataclass(frozen=True)
class MetricsReport:
    level: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: tuple[int, int, int, int]  # (TP, FP, FN, TN)
    run_id: str = ""
    config_id: str = ""
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass(frozen=True)
class AveragedReport:
    level: str
    config_id: str
    n_runs: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    runs: tuple[MetricsReport, ...]


def compute_metrics(pairs, level: str, run_id: str = "",
                    config_id: str = "") -> MetricsReport:
    """Confusion counts and derived metrics from (predicted, gold) label pairs."""
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}; expected one of {LEVELS}")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot compute metrics on an empty prediction set")

    tp = fp = fn = tn = 0
    for predicted, gold in pairs:
        if predicted not in (0, 1) or gold not in (0, 1):
            raise ValueError(f"labels must be 0/1, got ({predicted!r}, {gold!r})")
        if predicted == 1 and gold == 1:
            tp += 1
        elif predicted == 1 and gold == 0:
            fp += 1
        elif predicted == 0 and gold == 1:
            fn += 1
        else:
            tn += 1

    total = tp + fp + fn + tn
    precision_undefined = (tp + fp) == 0
    recall_undefined = (tp + fn) == 0
    precision = 0.0 if precision_undefined else tp / (tp + fp)
    recall = 0.0 if recall_undefined else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricsReport(
        level=level,
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        counts=(tp, fp, fn, tn),
        run_id=run_id,
        config_id=config_id,
        precision_undefined=precision_undefined,
        recall_undefined=recall_undefined,
    )


def average_runs(reports: list[MetricsReport]) -> AveragedReport:
    """Unweighted arithmetic mean over runs of one configuration and level."""
    if not reports:
        raise ValueError("no reports to average")
    config_ids = {r.config_id for r in reports}
    levels = {r.level for r in reports}
    if len(config_ids) != 1 or len(levels) != 1:
        raise ValueError(
            f"heterogeneous reports: config_ids={sorted(config_ids)}, levels={sorted(levels)}"
        )
    n = len(reports)
    return AveragedReport(
        level=reports[0].level,
        config_id=reports[0].config_id,
        n_runs=n,
        accuracy=sum(r.accuracy for r in reports) / n,
        precision=sum(r.precision for r in reports) / n,
        recall=sum(r.recall for r in reports) / n,
        f1=sum(r.f1 for r in reports) / n,
        runs=tuple(reports),
    )


def _fmt(value: float) -> str:
    return f"{value:.2f}"


_COLUMNS = ["config", "attempt", "level", "accuracy", "precision", "recall", "f1"]


def _group_reports(reports):
    grouped: dict[str, dict[str, list[MetricsReport]]] = {}
    for r in reports:
        grouped.setdefault(r.config_id, {}).setdefault(r.level, []).append(r)
    return grouped


def _table_rows(reports) -> list[list[str]]:
    rows = []
    for config_id in sorted(_group_reports(reports)):
        by_level = _group_reports(reports)[config_id]
        for level in LEVELS:
            if level not in by_level:
                continue
            runs = sorted(by_level[level], key=lambda r: r.run_id)
            for r in runs:
                rows.append([config_id, r.run_id, level, _fmt(r.accuracy),
                             _fmt(r.precision), _fmt(r.recall), _fmt(r.f1)])
            avg = average_runs(runs)
            rows.append([config_id, "AVG", level, _fmt(avg.accuracy),
                         _fmt(avg.precision), _fmt(avg.recall), _fmt(avg.f1)])
    return rows


def render_delimited(reports) -> str:
    """Per-attempt rows plus AVG rows per configuration, as CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(_COLUMNS)
    writer.writerows(_table_rows(reports))
    return buf.getvalue()


def render_text(reports) -> str:
    """Same table, aligned for reading."""
    rows = [_COLUMNS] + _table_rows(reports)
    widths = [max(len(row[i]) for row in rows) for i in range(len(_COLUMNS))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(_COLUMNS))))
    return "\n".join(lines) + "\n"


def render_tables(reports, out_dir: str | Path) -> dict[str, Path]:
    """Write the delimited and human-readable report files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "metrics.csv",
        "txt": out_dir / "metrics.txt",
    }
    paths["csv"].write_text(render_delimited(reports), encoding="utf-8")
    paths["txt"].write_text(render_text(reports), encoding="utf-8")
    return paths
