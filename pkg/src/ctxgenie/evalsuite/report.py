"""Evaluation report records and deterministic serialisation.

Reports carry no timestamps, hostnames or timing data, so two runs over the
same inputs serialise to byte-identical files; wall-clock measurements live
in a separate sidecar (see :mod:`ctxgenie.reader`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .metrics import AccuracyReport


@dataclass(frozen=True)
class EvalReport:
    """Outcome of one reader evaluation run.

    ``config`` is the verbatim run-config snapshot the run was launched
    with, so a report is self-describing; ``extras`` carries optional blocks
    (rerank curves, grounding-quality scores, shuffle tables).
    """

    benchmark: str
    family: str
    grounding: str  # "none" | "generated" | "retrieved" | "mixed"
    k_contexts: int
    n: int
    n_correct: int
    accuracy: float
    parse_failures: int
    parse_failure_rate: float
    overflow_retries: int = 0
    per_subject: dict[str, dict] = field(default_factory=dict)
    config: Optional[Mapping] = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_accuracy(
        cls,
        benchmark: str,
        family: str,
        grounding: str,
        k_contexts: int,
        report: AccuracyReport,
        overflow_retries: int = 0,
        config: Mapping | None = None,
        extras: dict | None = None,
    ) -> "EvalReport":
        return cls(
            benchmark=benchmark,
            family=family,
            grounding=grounding,
            k_contexts=k_contexts,
            n=report.n,
            n_correct=report.n_correct,
            accuracy=report.accuracy,
            parse_failures=report.parse_failures,
            parse_failure_rate=report.parse_failure_rate,
            overflow_retries=overflow_retries,
            per_subject=report.per_subject,
            config=config,
            extras=dict(extras or {}),
        )

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "family": self.family,
            "grounding": self.grounding,
            "k_contexts": self.k_contexts,
            "n": self.n,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "parse_failures": self.parse_failures,
            "parse_failure_rate": self.parse_failure_rate,
            "overflow_retries": self.overflow_retries,
            "per_subject": {k: dict(v) for k, v in sorted(self.per_subject.items())},
            "config": dict(self.config) if self.config is not None else None,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            benchmark=str(obj["benchmark"]),
            family=str(obj["family"]),
            grounding=str(obj["grounding"]),
            k_contexts=int(obj["k_contexts"]),
            n=int(obj["n"]),
            n_correct=int(obj["n_correct"]),
            accuracy=float(obj["accuracy"]),
            parse_failures=int(obj["parse_failures"]),
            parse_failure_rate=float(obj["parse_failure_rate"]),
            overflow_retries=int(obj.get("overflow_retries", 0)),
            per_subject=dict(obj.get("per_subject", {})),
            config=obj.get("config"),
            extras=dict(obj.get("extras", {})),
        )


def write_report(report: EvalReport, path: Union[str, Path]) -> None:
    """Write a report as sorted-key JSON; byte-stable across repeated runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)
    path.write_text(payload + "\n", encoding="utf-8")


def load_report(path: Union[str, Path]) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def render_text_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Fixed-width text table; numeric cells right-aligned, text left-aligned."""
    str_rows = [[str(c) for c in row] for row in rows]
    columns = len(headers)
    for row in str_rows:
        if len(row) != columns:
            raise ValueError(f"row has {len(row)} cells, expected {columns}")
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in str_rows)) if str_rows else len(headers[i])
        for i in range(columns)
    ]
    numeric = [
        bool(str_rows) and all(_is_number(r[i]) for r in str_rows) for i in range(columns)
    ]

    def fmt(cells: Sequence[str], as_header: bool = False) -> str:
        parts = []
        for i, cell in enumerate(cells):
            if numeric[i] and not as_header:
                parts.append(cell.rjust(widths[i]))
            else:
                parts.append(cell.ljust(widths[i]))
        return "  ".join(parts).rstrip()

    lines = [fmt(list(headers), as_header=True), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in str_rows)
    return "\n".join(lines)


def render_csv(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """CSV text with a header row; ``\\n`` line endings for byte stability."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(headers))
    for row in rows:
        writer.writerow(list(row))
    return buf.getvalue()


def write_csv(
    headers: Sequence[str], rows: Sequence[Sequence[object]], path: Union[str, Path]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(headers, rows), encoding="utf-8")


def report_csv_rows(report: EvalReport) -> tuple[list[str], list[list[object]]]:
    """Flatten a report into (headers, rows): summary line plus per-subject lines."""
    headers = ["section", "n", "n_correct", "accuracy", "parse_failures"]
    rows: list[list[object]] = [
        ["all", report.n, report.n_correct, report.accuracy, report.parse_failures]
    ]
    for subject in sorted(report.per_subject):
        entry = report.per_subject[subject]
        rows.append(
            [
                f"subject:{subject}",
                entry.get("n", 0),
                entry.get("n_correct", 0),
                entry.get("accuracy", 0.0),
                "",
            ]
        )
    return headers, rows
