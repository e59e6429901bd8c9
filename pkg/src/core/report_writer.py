"""CSV writer for KL and oracle reports.

Rows follow the fixed report schema so downstream plotting tools can
consume any report without per-run configuration.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

REPORT_COLUMNS = [
    "benchmark",
    "method",
    "kind",
    "k",
    "metric",
    "value",
    "ci_low",
    "ci_high",
    "n_runs",
]


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.10g}"


class ReportWriter:
    """CSV writer for report rows.

    Each row is one (benchmark, method, kind, k, metric) measurement.
    """

    def __init__(self, path: Path) -> None:
        self._path = path
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._file = self._path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(REPORT_COLUMNS)
        self._rows = 0

    @property
    def path(self) -> Path:
        return self._path

    @property
    def rows_written(self) -> int:
        return self._rows

    def write(
        self,
        *,
        benchmark: str,
        method: str,
        kind: str,
        k: int,
        metric: str,
        value: float,
        ci_low: Optional[float] = None,
        ci_high: Optional[float] = None,
        n_runs: int = 0,
    ) -> None:
        """Append one measurement to the CSV."""
        self._writer.writerow(
            [
                benchmark,
                method,
                kind,
                k,
                metric,
                _fmt(value),
                _fmt(ci_low),
                _fmt(ci_high),
                n_runs,
            ]
        )
        self._rows += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.flush()
            self._file.close()

    def __enter__(self) -> "ReportWriter":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass
