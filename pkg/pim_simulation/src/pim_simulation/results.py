"""Experiment metrics and their CSV / JSON export."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from pim_simulation.parameters import ExportFormat

_LOG = logging.getLogger(__name__)

CSV_COLUMNS = ["experiment", "mechanism", "seed", "metric", "value"]


class MetricsReport(BaseModel):
    """Metrics of one (experiment, mechanism, seed) run."""

    model_config = ConfigDict(extra="forbid")

    experiment: str
    mechanism: str
    seed: int
    metrics: Dict[str, float] = Field(default_factory=dict)
    kernels: List[Dict[str, Any]] = Field(default_factory=list)

    @field_validator("metrics")
    @classmethod
    def _non_negative(cls, metrics: Dict[str, float]) -> Dict[str, float]:
        negative = [name for name, value in metrics.items() if value < 0]
        if negative:
            raise ValueError(f"negative metrics: {', '.join(sorted(negative))}")
        return metrics


def reports_to_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """Long format table, one row per metric, metrics sorted by name within each report."""
    rows = [
        (report.experiment, report.mechanism, report.seed, name, float(report.metrics[name]))
        for report in reports
        for name in sorted(report.metrics)
    ]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def export(reports: Sequence[MetricsReport], path: Path, export_format: ExportFormat) -> Path:
    """Write reports as a CSV table or a JSON list.

    Raises:
        OSError: if the path cannot be written
    """
    if export_format == ExportFormat.CSV:
        with open(path, "w", encoding="utf8", newline="") as file:
            reports_to_frame(reports).to_csv(file, index=False, lineterminator="\n")
    else:
        with open(path, "w", encoding="utf8") as file:
            json.dump([report.model_dump(mode="json") for report in reports], file, indent=2)
            file.write("\n")
    _LOG.info("Wrote %s reports to %s", len(reports), path)
    return path


def load_reports(path: Path) -> List[MetricsReport]:
    """Reports from a JSON export."""
    with open(path, encoding="utf8") as file:
        return [MetricsReport.model_validate(entry) for entry in json.load(file)]


def load_frame(path: Path) -> pd.DataFrame:
    """Long format table from a CSV export."""
    return pd.read_csv(path)
