"""Per-model summary statistics and table/distribution exports."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, NamedTuple

from .metrics import MetricRecord

METRICS = ("severity", "recall", "kappa", "judge")

TITLES = {
    "severity": "Severity Score",
    "recall": "Recall",
    "kappa": "Kappa Cohen Index",
    "judge": "LLM Based Score",
}

COLUMNS = ("Model", "Mean Score", "Std Score", "Max Score", "Min Score")

FOOTER = (
    "Std is the population standard deviation (divides by n). "
    "Forms with no severe symptoms are excluded from Severity and Recall; "
    "forms without a judge grade are excluded from the LLM Based Score."
)


class Stats(NamedTuple):
    mean: float
    std: float
    max: float
    min: float
    n: int
    n_excluded: int


@dataclass(frozen=True)
class ExclusionPolicy:
    exclude_vacuous: bool = True


DEFAULT_POLICY = ExclusionPolicy()


@dataclass
class ModelStats:
    model_id: str
    metrics: dict[str, Stats | None] = field(default_factory=dict)
    excluded: dict[str, int] = field(default_factory=dict)


def metric_value(record: MetricRecord, metric: str, policy: ExclusionPolicy = DEFAULT_POLICY):
    """The record's value for ``metric``, or None when the policy excludes it."""
    if metric in ("severity", "recall"):
        if policy.exclude_vacuous and record.severity_vacuous:
            return None
        return record.severity_score if metric == "severity" else record.recall
    if metric == "kappa":
        return record.kappa
    if metric == "judge":
        return record.judge_grade
    raise ValueError(f"unknown metric {metric!r}")


def aggregate(
    records: Iterable[MetricRecord], metric: str, policy: ExclusionPolicy = DEFAULT_POLICY
) -> tuple[Stats | None, int]:
    """Mean, population std, max, min over the kept records.

    Returns ``(None, n_excluded)`` when nothing is left to aggregate.
    """
    values: list[float] = []
    excluded = 0
    for rec in records:
        v = metric_value(rec, metric, policy)
        if v is None:
            excluded += 1
        else:
            values.append(v)
    if not values:
        return None, excluded
    # fmean and pstdev are order-independent (exact summation).
    stats = Stats(
        mean=statistics.fmean(values),
        std=statistics.pstdev(values),
        max=max(values),
        min=min(values),
        n=len(values),
        n_excluded=excluded,
    )
    return stats, excluded


def model_stats(
    model_id: str, records: list[MetricRecord], policy: ExclusionPolicy = DEFAULT_POLICY
) -> ModelStats:
    out = ModelStats(model_id)
    for metric in METRICS:
        stats, excluded = aggregate(records, metric, policy)
        out.metrics[metric] = stats
        out.excluded[metric] = excluded
    return out


def fmt2(value: float) -> str:
    """Two decimals, halves rounded away from zero."""
    d = Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    if d == 0:
        d = abs(d)
    return f"{d:.2f}"


def table_rows(stats: list[ModelStats], metric: str) -> list[list[str]]:
    rows = []
    for ms in stats:
        s = ms.metrics.get(metric)
        if s is None:
            rows.append([ms.model_id, "n/a", "n/a", "n/a", "n/a"])
        else:
            rows.append([ms.model_id, fmt2(s.mean), fmt2(s.std), fmt2(s.max), fmt2(s.min)])
    return rows


def emit_tables(stats: list[ModelStats], fmt: str = "markdown") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Table", *COLUMNS])
        for metric in METRICS:
            for row in table_rows(stats, metric):
                writer.writerow([TITLES[metric], *row])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")

    lines: list[str] = []
    for metric in METRICS:
        lines.append(f"## Models Evaluation - {TITLES[metric]}")
        lines.append("")
        lines.append("| " + " | ".join(COLUMNS) + " |")
        lines.append("|" + "|".join(["---"] + [":---:"] * 4) + "|")
        for row in table_rows(stats, metric):
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    if stats:
        lines.append("## Sample sizes")
        lines.append("")
        lines.append("| Model | " + " | ".join(f"{TITLES[m]} n (excluded)" for m in METRICS) + " |")
        lines.append("|" + "|".join(["---"] * (len(METRICS) + 1)) + "|")
        for ms in stats:
            cells = []
            for m in METRICS:
                s = ms.metrics.get(m)
                cells.append(f"{s.n if s else 0} ({ms.excluded.get(m, 0)})")
            lines.append(f"| {ms.model_id} | " + " | ".join(cells) + " |")
        lines.append("")
    lines.append(FOOTER)
    return "\n".join(lines) + "\n"


def emit_distributions(
    records: Iterable[MetricRecord],
    out_path: str | Path,
    policy: ExclusionPolicy = DEFAULT_POLICY,
) -> Path:
    """Long-format (model_id, metric, value) CSV, one row per kept score."""
    out_path = Path(out_path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model_id", "metric", "value"])
    for rec in records:
        for metric in METRICS:
            v = metric_value(rec, metric, policy)
            if v is not None:
                writer.writerow([rec.model_id, metric, repr(float(v))])
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write distributions to {out_path}: {exc}") from exc
    return out_path
