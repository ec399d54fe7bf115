"""Flat per-metric result rows and their CSV encoding."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

__all__ = ["RunRecord", "CSV_HEADER", "write_csv", "read_csv", "format_float"]

CSV_HEADER = (
    "experiment",
    "method",
    "replicate",
    "seed",
    "stop_index",
    "criterion_trace",
    "metric",
    "value",
    "wall_time_ms",
)


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    method: str
    replicate: int
    seed: int
    stop_index: int
    criterion_trace: Tuple[float, ...]
    metric: str
    value: float
    wall_time_ms: float

    def __post_init__(self):
        object.__setattr__(self, "criterion_trace", tuple(float(v) for v in self.criterion_trace))
        if not self.wall_time_ms >= 0:
            raise ValueError(f"wall_time_ms must be >= 0, got {self.wall_time_ms}")


def format_float(x: float) -> str:
    # 17 significant digits round-trip every double exactly
    return format(float(x), ".17g")


def _row(rec: RunRecord) -> List[str]:
    return [
        rec.experiment,
        rec.method,
        str(rec.replicate),
        str(rec.seed),
        str(rec.stop_index),
        ";".join(format_float(v) for v in rec.criterion_trace),
        rec.metric,
        format_float(rec.value),
        format_float(rec.wall_time_ms),
    ]


def write_csv(records: Iterable[RunRecord], path) -> None:
    """Write records to ``path`` (a filename or an open text stream)."""
    if hasattr(path, "write"):
        _write(records, path)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write(records, fh)


def _write(records, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow(_row(rec))


def read_csv(path) -> List[RunRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        for row in reader:
            trace = tuple(float(v) for v in row[5].split(";")) if row[5] else ()
            out.append(
                RunRecord(
                    experiment=row[0],
                    method=row[1],
                    replicate=int(row[2]),
                    seed=int(row[3]),
                    stop_index=int(row[4]),
                    criterion_trace=trace,
                    metric=row[6],
                    value=float(row[7]),
                    wall_time_ms=float(row[8]),
                )
            )
    return out
