"""Evaluation reports: a deterministic JSON/CSV record plus a timing sidecar.

The main report holds only run-reproducible quantities, so two runs with
the same seed emit byte-identical files. Wall-clock measurements are
hardware noise by definition and live in a separate timing file.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class EvalReport:
    benchmark_id: str
    method: str
    auroc: float
    fpr_at_95_tpr: float
    per_source_auroc: dict[str, float] = field(default_factory=dict)
    auroc_raw_score: float | None = None
    nfe_per_sample: int = 0
    wall_time_per_sample_ms: float | None = None
    config_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.auroc <= 1.0:
            raise ValueError(f"AUROC out of range: {self.auroc}")
        if not 0.0 <= self.fpr_at_95_tpr <= 1.0:
            raise ValueError(f"FPR out of range: {self.fpr_at_95_tpr}")
        if self.nfe_per_sample != int(self.nfe_per_sample):
            raise ValueError("NFE per sample must be an exact integer")


REPORT_FIELDS = ("benchmark_id", "method", "auroc", "fpr_at_95_tpr",
                 "per_source_auroc", "auroc_raw_score", "nfe_per_sample",
                 "config_echo")
CSV_FIELDS = ("benchmark_id", "method", "auroc", "fpr_at_95_tpr",
              "auroc_raw_score", "nfe_per_sample")


def emit_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    """Write report.json and a summary CSV row; returns their paths.

    Output bytes depend only on the report's deterministic fields. The
    wall-time measurement, when present, goes to timing.json alongside.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in asdict(report).items() if k in REPORT_FIELDS}
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    csv_path = out_dir / "summary.csv"
    fresh = not csv_path.exists()
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_FIELDS)
        row = asdict(report)
        writer.writerow([row[k] for k in CSV_FIELDS])
    if report.wall_time_per_sample_ms is not None:
        timing = {"wall_time_per_sample_ms": report.wall_time_per_sample_ms,
                  "hardware": hardware_string()}
        (out_dir / "timing.json").write_text(json.dumps(timing, sort_keys=True,
                                                        indent=2) + "\n")
    return json_path, csv_path


def load_report(path) -> EvalReport:
    payload = json.loads(Path(path).read_text())
    return EvalReport(**payload)


def hardware_string() -> str:
    return f"{platform.machine()}/{platform.processor() or 'unknown'}/{platform.system()}"


def measure_latency_ms(fn, n_calls: int = 100, warmup: int = 10) -> float:
    """Median wall time of fn() in milliseconds after warmup calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(n_calls):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000.0)
    times.sort()
    mid = len(times) // 2
    return times[mid] if len(times) % 2 else 0.5 * (times[mid - 1] + times[mid])
