"""Per-iteration CSV records, wall-clock timings, and the constraint summary table."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from barrierpo.optimizer import IterationReport

METRICS_FILE = "metrics.csv"
TIMINGS_FILE = "timings.csv"
SUMMARY_FILE = "summary.txt"

TIMING_PHASES = ("collect", "policy_step", "critic")


def format_float(value: float) -> str:
    """17 significant digits, enough to read back the same double."""
    return f"{float(value):.17g}"


@dataclass(frozen=True)
class MetricsSchema:
    """Column layout fixed at run start.

    ``monitored`` names every enabled constraint (``j_c_``/``d_i_``
    columns); ``enforced`` names those with a barrier (``margin_``
    columns).
    """

    monitored: tuple[str, ...]
    enforced: tuple[str, ...]

    @property
    def columns(self) -> list[str]:
        return [
            "iter",
            "mean_reward",
            *(f"j_c_{name}" for name in self.monitored),
            *(f"d_i_{name}" for name in self.monitored),
            "kl",
            "objective_before",
            "objective_after",
            "accepted",
            "backtracks",
            *(f"margin_{name}" for name in self.enforced),
            "value_loss",
            "cost_value_loss",
            "status",
        ]

    def row(self, report: IterationReport) -> dict[str, str]:
        if len(report.j_c) != len(self.monitored) or len(report.barrier_margins) != len(self.enforced):
            raise ValueError("Report does not match the metrics column layout.")
        row = {
            "iter": str(report.iter),
            "mean_reward": format_float(report.mean_reward),
            "kl": format_float(report.kl),
            "objective_before": format_float(report.objective_before),
            "objective_after": format_float(report.objective_after),
            "accepted": str(int(report.accepted)),
            "backtracks": str(report.backtracks),
            "value_loss": format_float(report.value_loss),
            "cost_value_loss": format_float(report.cost_value_loss),
            "status": report.status,
        }
        for name, j, d in zip(self.monitored, report.j_c, report.d_i, strict=True):
            row[f"j_c_{name}"] = format_float(j)
            row[f"d_i_{name}"] = format_float(d)
        for name, margin in zip(self.enforced, report.barrier_margins, strict=True):
            row[f"margin_{name}"] = format_float(margin)
        return row

    def parse(self, row: dict[str, str]) -> IterationReport:
        """Rebuild the report fields a row carries (wall times live in timings.csv)."""
        margins = np.array([float(row[f"margin_{name}"]) for name in self.enforced])
        return IterationReport(
            iter=int(row["iter"]),
            mean_reward=float(row["mean_reward"]),
            j_c=np.array([float(row[f"j_c_{name}"]) for name in self.monitored]),
            d_i=np.array([float(row[f"d_i_{name}"]) for name in self.monitored]),
            kl=float(row["kl"]),
            objective_before=float(row["objective_before"]),
            objective_after=float(row["objective_after"]),
            accepted=row["accepted"] == "1",
            backtracks=int(row["backtracks"]),
            barrier_margins=margins,
            origin_margins=np.zeros(0),
            status=row["status"],
            value_loss=float(row["value_loss"]),
            cost_value_loss=float(row["cost_value_loss"]),
        )

    @classmethod
    def from_header(cls, header: Sequence[str]) -> MetricsSchema:
        monitored = tuple(c[len("j_c_") :] for c in header if c.startswith("j_c_"))
        enforced = tuple(c[len("margin_") :] for c in header if c.startswith("margin_"))
        return cls(monitored, enforced)


class MetricsWriter:
    """Appends report rows to metrics.csv and timings.csv, flushing each row."""

    def __init__(self, directory: Path, schema: MetricsSchema, *, keep_until: int | None = None) -> None:
        self.schema = schema
        self.metrics_path = directory / METRICS_FILE
        self.timings_path = directory / TIMINGS_FILE
        directory.mkdir(parents=True, exist_ok=True)
        kept_metrics = _kept_rows(self.metrics_path, keep_until)
        kept_timings = _kept_rows(self.timings_path, keep_until)
        self._metrics_file = self.metrics_path.open("w", newline="", encoding="utf-8")
        self._timings_file = self.timings_path.open("w", newline="", encoding="utf-8")
        self._metrics = csv.DictWriter(self._metrics_file, fieldnames=schema.columns, lineterminator="\n")
        self._timings = csv.DictWriter(
            self._timings_file,
            fieldnames=["iter", *(f"{phase}_ms" for phase in TIMING_PHASES)],
            lineterminator="\n",
        )
        self._metrics.writeheader()
        self._timings.writeheader()
        self._metrics.writerows(kept_metrics)
        self._timings.writerows(kept_timings)
        self.flush()

    def write(self, report: IterationReport) -> None:
        self._metrics.writerow(self.schema.row(report))
        timing = {"iter": str(report.iter)}
        for phase in TIMING_PHASES:
            timing[f"{phase}_ms"] = f"{1000.0 * report.wall_times.get(phase, 0.0):.3f}"
        self._timings.writerow(timing)
        self.flush()

    def flush(self) -> None:
        self._metrics_file.flush()
        self._timings_file.flush()

    def close(self) -> None:
        self._metrics_file.close()
        self._timings_file.close()

    def __enter__(self) -> MetricsWriter:
        return self

    def __exit__(self, *_exc: object) -> None:
        self.close()


def _kept_rows(path: Path, keep_until: int | None) -> list[dict[str, str]]:
    if keep_until is None or not path.is_file():
        return []
    with path.open(newline="", encoding="utf-8") as handle:
        return [row for row in csv.DictReader(handle) if int(row["iter"]) < keep_until]


def read_metrics(path: Path) -> tuple[MetricsSchema, list[IterationReport]]:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        schema = MetricsSchema.from_header(reader.fieldnames or [])
        return schema, [schema.parse(row) for row in reader]


@dataclass(frozen=True)
class ConstraintVerdict:
    name: str
    j_c: float
    limit: float
    satisfied: bool
    near_limit: bool

    @property
    def violated(self) -> bool:
        return not self.satisfied


def verdicts(
    names: Sequence[str],
    j_c: Iterable[float],
    limits: Iterable[float],
    *,
    tolerance: float = 0.0,
    near_fraction: float = 0.1,
) -> list[ConstraintVerdict]:
    """Satisfaction of each constraint, ``j <= limit * (1 + tolerance)``.

    ``near_limit`` flags a satisfied constraint within ``near_fraction`` of
    its limit.
    """
    result = []
    for name, j, limit in zip(names, j_c, limits, strict=True):
        satisfied = j <= limit * (1.0 + tolerance) if limit >= 0 else j <= limit
        near = satisfied and j >= limit * (1.0 - near_fraction)
        result.append(ConstraintVerdict(name, float(j), float(limit), bool(satisfied), bool(near)))
    return result


def write_summary(stream: TextIO, title: str, rows: Sequence[ConstraintVerdict], *, mean_reward: float) -> None:
    """Plain-text constraint table: one row per constraint, J against its limit."""
    width = max([len("constraint"), *(len(r.name) for r in rows)])
    stream.write(f"{title}\n")
    stream.write(f"final mean reward: {format_float(mean_reward)}\n\n")
    stream.write(f"{'constraint':<{width}}  {'j_c':>24}  {'limit':>24}  satisfied\n")
    for row in rows:
        j = format_float(row.j_c) if math.isfinite(row.j_c) else "nan"
        stream.write(f"{row.name:<{width}}  {j:>24}  {format_float(row.limit):>24}  {'yes' if row.satisfied else 'NO'}\n")


def rows_to_csv(path: Path, rows: Sequence[dict[str, Any]]) -> None:
    """Write dict rows with the first row's keys as header; floats at full precision."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        if not rows:
            return
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: format_float(v) if isinstance(v, float) else v for k, v in row.items()}
            )


__all__ = [
    "METRICS_FILE",
    "SUMMARY_FILE",
    "TIMINGS_FILE",
    "ConstraintVerdict",
    "MetricsSchema",
    "MetricsWriter",
    "format_float",
    "read_metrics",
    "rows_to_csv",
    "verdicts",
    "write_summary",
]
