"""Result rows for sweeps/grids and their CSV/JSON emission.

Column order is fixed; accuracies render with 4 decimals (half-up). Wall time
is tracked in memory but excluded from emitted files by default so identical
runs produce byte-identical reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .store import round_half_up

CSV_COLUMNS = [
    "dataset",
    "inputs",
    "method",
    "residual",
    "aggregation",
    "accuracy",
    "fused_dim",
    "memory_bytes",
    "best",
    "error",
]


@dataclass
class ResultRow:
    dataset: str
    inputs: list[tuple[str, str]]  # (model, layer label)
    method: str
    residual: bool = False
    aggregation: str = ""
    accuracy: float | None = None
    fused_dim: int | None = None
    memory_bytes: int | None = None
    best: bool = False
    error: str = ""
    wall_time_s: float = 0.0

    def inputs_label(self) -> str:
        return "+".join(f"{m}:{layer}" for m, layer in self.inputs)

    def to_record(self, include_timing: bool = False) -> dict:
        rec = {
            "dataset": self.dataset,
            "inputs": self.inputs_label(),
            "method": self.method,
            "residual": "true" if self.residual else "false",
            "aggregation": self.aggregation,
            "accuracy": "" if self.accuracy is None else round_half_up(self.accuracy, 4),
            "fused_dim": "" if self.fused_dim is None else str(self.fused_dim),
            "memory_bytes": "" if self.memory_bytes is None else str(self.memory_bytes),
            "best": "true" if self.best else "",
            "error": self.error,
        }
        if include_timing:
            rec["wall_time_s"] = round_half_up(self.wall_time_s, 3)
        return rec

    @staticmethod
    def from_record(rec: dict) -> "ResultRow":
        inputs = []
        if rec.get("inputs"):
            for part in rec["inputs"].split("+"):
                model, _, layer = part.rpartition(":")
                inputs.append((model, layer))
        acc = rec.get("accuracy", "")
        return ResultRow(
            dataset=rec.get("dataset", ""),
            inputs=inputs,
            method=rec.get("method", ""),
            residual=rec.get("residual", "") == "true",
            aggregation=rec.get("aggregation", ""),
            accuracy=float(acc) if acc not in ("", None) else None,
            fused_dim=int(rec["fused_dim"]) if rec.get("fused_dim") else None,
            memory_bytes=int(rec["memory_bytes"]) if rec.get("memory_bytes") else None,
            best=rec.get("best", "") == "true",
            error=rec.get("error", "") or "",
        )


@dataclass
class SweepResult:
    rows: list[ResultRow]
    summary: dict = field(default_factory=dict)


def best_row(rows: list[ResultRow]) -> ResultRow:
    """Row with the highest accuracy; ties go to the earliest row."""
    scored = [r for r in rows if r.accuracy is not None]
    if not scored:
        raise ValueError("no scored rows")
    best = scored[0]
    for r in scored[1:]:
        if r.accuracy > best.accuracy:
            best = r
    return best


def emit_report(result: SweepResult, fmt: str, path, include_timing: bool = False) -> None:
    """Write a sweep result as CSV or JSON with a stable column/key order."""
    if not result.rows:
        raise ValueError("refusing to emit an empty result")
    path = Path(path)
    if fmt == "csv":
        columns = CSV_COLUMNS + (["wall_time_s"] if include_timing else [])
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in result.rows:
                writer.writerow(row.to_record(include_timing))
    elif fmt == "json":
        doc = {
            "rows": [row.to_record(include_timing) for row in result.rows],
            "summary": result.summary,
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}; valid: csv, json")


def load_report(path) -> SweepResult:
    """Read a report back; format inferred from the file suffix."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        rows = [ResultRow.from_record(rec) for rec in doc["rows"]]
        return SweepResult(rows, doc.get("summary", {}))
    with open(path, newline="") as fh:
        rows = [ResultRow.from_record(rec) for rec in csv.DictReader(fh)]
    return SweepResult(rows)
