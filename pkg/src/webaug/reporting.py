"""Diagnostic reports: entropy distributions and parameter sweeps.

Reports land under {output_dir}/reports/ as CSV plus aligned text tables,
with matplotlib renderings of the same data saved alongside as PNGs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .pipeline import RunConfig, run_batch

HISTOGRAM_BINS = 20
CORRECT_THRESHOLD = 0.5


class ReportError(Exception):
    pass


@dataclass
class EntropyHistogram:
    bin_edges: List[float]
    correct_counts: List[int]
    incorrect_counts: List[int]
    correct_mean: Optional[float]
    incorrect_mean: Optional[float]


@dataclass
class SweepSpec:
    parameter: str  # eta | top_k_band | n_samples
    values: Sequence
    base_config: RunConfig

    def __post_init__(self):
        if self.parameter not in ("eta", "top_k_band", "n_samples"):
            raise ReportError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values:
            raise ReportError("sweep needs at least one value")
        if self.parameter in ("eta", "n_samples"):
            numeric = list(self.values)
            if numeric != sorted(numeric) or len(set(numeric)) != len(numeric):
                raise ReportError("numeric sweep values must be strictly increasing")
        else:
            seen = set()
            for lo, hi in self.values:
                band = set(range(lo, hi + 1))
                if band & seen:
                    raise ReportError("top_k_band values must be disjoint")
                seen |= band


@dataclass
class SweepRow:
    value: object
    accuracy: Optional[float]
    retrieval_rate: Optional[float]
    status: str = "ok"


def load_trace_records(traces_path) -> List[dict]:
    records = []
    with Path(traces_path).open(encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


def entropy_histogram(records: Sequence[dict],
                      bins: int = HISTOGRAM_BINS) -> EntropyHistogram:
    """Aligned correct/incorrect histograms of per-example entropy values."""
    points = [
        (r["confidence"]["value"], r["metric_value"] >= CORRECT_THRESHOLD)
        for r in records
        if r.get("confidence") and r["confidence"].get("value") is not None
    ]
    if not points:
        raise ReportError("no traces with confidence values")
    values = [v for v, _ in points]
    lo, hi = min(values), max(values)
    width = (hi - lo) / bins if hi > lo else 1.0
    edges = [lo + i * width for i in range(bins + 1)]
    correct_counts = [0] * bins
    incorrect_counts = [0] * bins
    for value, correct in points:
        idx = min(int((value - lo) / width), bins - 1)
        (correct_counts if correct else incorrect_counts)[idx] += 1
    correct_values = [v for v, c in points if c]
    incorrect_values = [v for v, c in points if not c]
    return EntropyHistogram(
        bin_edges=edges,
        correct_counts=correct_counts,
        incorrect_counts=incorrect_counts,
        correct_mean=(sum(correct_values) / len(correct_values)
                      if correct_values else None),
        incorrect_mean=(sum(incorrect_values) / len(incorrect_values)
                        if incorrect_values else None),
    )


def _reports_dir(output_dir) -> Path:
    path = Path(output_dir) / "reports"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_entropy_report(histogram: EntropyHistogram, output_dir) -> Path:
    """Persist the histogram as CSV, a text table, and a PNG figure."""
    reports = _reports_dir(output_dir)
    csv_path = reports / "entropy_histogram.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_start", "bin_end", "correct", "incorrect"])
        for i in range(len(histogram.correct_counts)):
            writer.writerow([histogram.bin_edges[i], histogram.bin_edges[i + 1],
                             histogram.correct_counts[i],
                             histogram.incorrect_counts[i]])
    (reports / "entropy_histogram.txt").write_text(
        format_histogram_table(histogram), encoding="utf-8")

    fig, ax = plt.subplots(figsize=(6, 4))
    centers = [(histogram.bin_edges[i] + histogram.bin_edges[i + 1]) / 2
               for i in range(len(histogram.correct_counts))]
    width = (histogram.bin_edges[1] - histogram.bin_edges[0]) * 0.45
    ax.bar([c - width / 2 for c in centers], histogram.correct_counts,
           width=width, label="correct")
    ax.bar([c + width / 2 for c in centers], histogram.incorrect_counts,
           width=width, label="incorrect")
    ax.set_xlabel("entropy")
    ax.set_ylabel("examples")
    ax.legend()
    fig.tight_layout()
    fig.savefig(reports / "entropy_histogram.png", dpi=120)
    plt.close(fig)
    return csv_path


def format_histogram_table(histogram: EntropyHistogram) -> str:
    lines = [f"{'bin':>20} {'correct':>8} {'incorrect':>10}"]
    for i in range(len(histogram.correct_counts)):
        label = f"[{histogram.bin_edges[i]:.3f}, {histogram.bin_edges[i+1]:.3f})"
        lines.append(f"{label:>20} {histogram.correct_counts[i]:>8} "
                     f"{histogram.incorrect_counts[i]:>10}")
    lines.append("")
    correct = ("-" if histogram.correct_mean is None
               else f"{histogram.correct_mean:.4f}")
    incorrect = ("-" if histogram.incorrect_mean is None
                 else f"{histogram.incorrect_mean:.4f}")
    lines.append(f"mean entropy: correct={correct} incorrect={incorrect}")
    return "\n".join(lines) + "\n"


def _config_for_value(spec: SweepSpec, value) -> RunConfig:
    config = spec.base_config
    if spec.parameter == "eta":
        confidence = replace(config.confidence, entropy_threshold=float(value))
        return replace(config, confidence=confidence)
    if spec.parameter == "n_samples":
        confidence = replace(config.confidence, n_samples=int(value))
        return replace(config, confidence=confidence)
    lo, hi = value
    return replace(config, rank_band=(int(lo), int(hi)))


def _value_key(value) -> str:
    if isinstance(value, (tuple, list)):
        return f"{value[0]}-{value[1]}"
    return str(value)


def run_sweep(spec: SweepSpec, backend=None, index=None,
              examples=None) -> List[SweepRow]:
    """One full batch run per sweep value, persisted per row for resume.

    A failed row is marked and the sweep continues. Rows are returned in
    value order regardless of execution order.
    """
    reports = _reports_dir(spec.base_config.output_dir)
    rows = []
    for value in spec.values:
        key = _value_key(value)
        row_path = reports / f"sweep_{spec.parameter}_{key}.json"
        if row_path.exists():
            cached = json.loads(row_path.read_text(encoding="utf-8"))
            rows.append(SweepRow(value=value, accuracy=cached["accuracy"],
                                 retrieval_rate=cached["retrieval_rate"],
                                 status=cached["status"]))
            continue
        try:
            config = _config_for_value(spec, value)
            config = replace(config, output_dir=str(
                Path(spec.base_config.output_dir)
                / f"sweep_{spec.parameter}_{key}"))
            summary = run_batch(config, backend=backend, index=index,
                                examples=examples)
            metric_values = [m["value"] for m in summary["metrics"].values()]
            row = SweepRow(
                value=value,
                accuracy=(sum(metric_values) / len(metric_values)
                          if metric_values else None),
                retrieval_rate=(summary["retrieved"] / summary["n_examples"]
                                if summary["n_examples"] else None),
            )
        except Exception as exc:
            row = SweepRow(value=value, accuracy=None, retrieval_rate=None,
                           status=f"failed: {type(exc).__name__}: {exc}")
        row_path.write_text(json.dumps({
            "value": key, "accuracy": row.accuracy,
            "retrieval_rate": row.retrieval_rate, "status": row.status,
        }, sort_keys=True), encoding="utf-8")
        rows.append(row)
    write_sweep_report(spec, rows)
    return rows


def write_sweep_report(spec: SweepSpec, rows: Sequence[SweepRow]) -> Path:
    reports = _reports_dir(spec.base_config.output_dir)
    csv_path = reports / f"sweep_{spec.parameter}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([spec.parameter, "accuracy", "retrieval_rate", "status"])
        for row in rows:
            writer.writerow([_value_key(row.value), row.accuracy,
                             row.retrieval_rate, row.status])
    (reports / f"sweep_{spec.parameter}.txt").write_text(
        format_sweep_table(spec, rows), encoding="utf-8")

    ok_rows = [r for r in rows if r.status == "ok" and r.accuracy is not None]
    if ok_rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        labels = [_value_key(r.value) for r in ok_rows]
        ax.plot(labels, [r.accuracy for r in ok_rows], marker="o",
                label="accuracy")
        ax.plot(labels, [r.retrieval_rate for r in ok_rows], marker="s",
                label="retrieval rate")
        ax.set_xlabel(spec.parameter)
        ax.legend()
        fig.tight_layout()
        fig.savefig(reports / f"sweep_{spec.parameter}.png", dpi=120)
        plt.close(fig)
    return csv_path


def format_sweep_table(spec: SweepSpec, rows: Sequence[SweepRow]) -> str:
    lines = [f"{spec.parameter:>12} {'accuracy':>10} {'retr_rate':>10} status"]
    for row in rows:
        acc = "-" if row.accuracy is None else f"{row.accuracy:.4f}"
        rate = "-" if row.retrieval_rate is None else f"{row.retrieval_rate:.4f}"
        lines.append(f"{_value_key(row.value):>12} {acc:>10} {rate:>10} {row.status}")
    return "\n".join(lines) + "\n"
