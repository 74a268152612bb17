"""Accumulative and voting metrics, and pairwise scheduler comparison tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


@dataclass
class CampaignResult:
    coverage: dict
    fuzz_slices: dict
    meta: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return str(self.meta.get("label") or self.meta.get("policy") or "campaign")

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "coverage": {str(k): v for k, v in self.coverage.items()},
            "fuzz_slices": {str(k): v for k, v in self.fuzz_slices.items()},
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CampaignResult":
        d = json.loads(Path(path).read_text())
        return cls(d["coverage"], d["fuzz_slices"], d.get("meta", {}))


def result_from_event_log(path: str | Path) -> CampaignResult:
    """Rebuild final per-program totals from a scheduler event log."""
    coverage: dict = {}
    slices: dict = {}
    meta: dict = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                meta = {k: v for k, v in rec.items() if k not in ("type", "programs")}
                for pid in rec.get("programs", []):
                    coverage.setdefault(str(pid), 0)
                    slices.setdefault(str(pid), 0)
            elif kind == "tick":
                for pid, (n, cov) in rec["credit"].items():
                    slices[pid] = n
                    coverage[pid] = cov
    return CampaignResult(coverage, slices, meta)


def coverage_timeline(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Total coverage over all programs after each slice boundary of an event log."""
    current: dict = {}
    total = 0
    xs, ys = [0], [0]
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("type") != "tick":
                continue
            for pid, (_, cov) in rec["credit"].items():
                total += cov - current.get(pid, 0)
                current[pid] = cov
            xs.append(rec["slice"])
            ys.append(total)
    return np.array(xs), np.array(ys)


def accumulative_metric(result: CampaignResult) -> float:
    """Sum of final coverage over all programs."""
    return sum(result.coverage.values())


def accumulative_delta(a: CampaignResult, b: CampaignResult) -> float:
    """Percentage by which ``a``'s total coverage exceeds ``b``'s."""
    total_b = accumulative_metric(b)
    if total_b == 0:
        return 0.0 if accumulative_metric(a) == 0 else math.inf
    return 100.0 * (accumulative_metric(a) - total_b) / total_b


def voting_metric(a: CampaignResult, b: CampaignResult) -> float:
    """Signed percentage: programs where ``a`` covers strictly more, minus those where ``b`` does."""
    if set(a.coverage) != set(b.coverage):
        missing = set(a.coverage) ^ set(b.coverage)
        raise ValueError(f"results cover different programs: {sorted(map(str, missing))[:5]}")
    n = len(a.coverage)
    if n == 0:
        return 0.0
    wins_a = wins_b = 0
    for pid, cov_a in a.coverage.items():
        cov_b = b.coverage[pid]
        if cov_a > cov_b:
            wins_a += 1
        elif cov_b > cov_a:
            wins_b += 1
    return 100.0 * (wins_a - wins_b) / n


def _voting_counts(a: CampaignResult, b: CampaignResult) -> tuple[int, int, int]:
    better = sum(1 for pid, v in a.coverage.items() if v > b.coverage[pid])
    worse = sum(1 for pid, v in a.coverage.items() if v < b.coverage[pid])
    return better, worse, len(a.coverage) - better - worse


METRICS: dict[str, Callable[[CampaignResult, CampaignResult], float]] = {
    "accumulative": accumulative_delta,
    "voting": voting_metric,
}


def pairwise_table(results: Sequence[CampaignResult], metric: str = "accumulative") -> np.ndarray:
    """``M[i][j]`` = metric of row result ``i`` against column result ``j``."""
    if len(results) < 2:
        raise ValueError("need at least two results to compare")
    programs = set(results[0].coverage)
    for r in results[1:]:
        if set(r.coverage) != programs:
            raise ValueError(f"{r.label} was run on a different workload")
    fn = METRICS[metric]
    k = len(results)
    m = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i != j:
                m[i, j] = fn(results[i], results[j])
    return m


def render_table(labels: Sequence[str], matrix: np.ndarray, title: str = "") -> str:
    """Fixed-width text table; row scheduler compared against column scheduler."""
    width = max(8, *(len(s) for s in labels)) + 2
    out = io.StringIO()
    if title:
        out.write(title + "\n")
    out.write(" " * width + "".join(f"{s:>{width}}" for s in labels) + "\n")
    for i, row_label in enumerate(labels):
        cells = []
        for j in range(len(labels)):
            cells.append(f"{'-':>{width}}" if i == j else f"{matrix[i, j]:>+{width}.2f}")
        out.write(f"{row_label:<{width}}" + "".join(cells) + "\n")
    return out.getvalue()


def table_csv(labels: Sequence[str], matrix: np.ndarray) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scheduler", *labels])
    for label, row in zip(labels, matrix):
        w.writerow([label, *(f"{x:.4f}" for x in row)])
    return out.getvalue()


def time_allocation_summary(result: CampaignResult) -> dict:
    slices = list(result.fuzz_slices.values())
    if not slices:
        return {"min": 0, "max": 0, "mean": 0.0}
    return {"min": min(slices), "max": max(slices), "mean": sum(slices) / len(slices)}


def compare(results: Sequence[CampaignResult], out_dir: str | Path | None = None, figures: bool = True) -> dict:
    """Both pairwise tables, plus per-campaign totals; optionally written to ``out_dir``.

    Writes ``<metric>.csv``, ``comparison.json``, ``report.txt`` and, with
    ``figures``, PNG heatmaps and a coverage bar chart.
    """
    labels = [r.label for r in results]
    tables = {name: pairwise_table(results, name) for name in METRICS}
    summary = {
        "labels": labels,
        "totals": {r.label: accumulative_metric(r) for r in results},
        "time_allocation": {r.label: time_allocation_summary(r) for r in results},
        "tables": {name: m.round(6).tolist() for name, m in tables.items()},
        "voting_counts": {
            f"{a.label} vs {b.label}": _voting_counts(a, b)
            for i, a in enumerate(results)
            for b in results[i + 1:]
        },
    }
    text = "\n".join(
        render_table(labels, tables[name], f"{name} metric (% row vs column)") for name in METRICS
    )
    lines = [text, "total coverage:"]
    for label, total in summary["totals"].items():
        alloc = summary["time_allocation"][label]
        lines.append(
            f"  {label:<16} {total:>12}   slices/program min {alloc['min']} max {alloc['max']}"
        )
    summary["text"] = "\n".join(lines) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, m in tables.items():
            (out / f"{name}.csv").write_text(table_csv(labels, m))
        (out / "comparison.json").write_text(
            json.dumps({k: v for k, v in summary.items() if k != "text"}, indent=1, sort_keys=True) + "\n"
        )
        (out / "report.txt").write_text(summary["text"])
        if figures:
            from fuzzscale import plots

            for name, m in tables.items():
                plots.pairwise_heatmap(labels, m, out / f"{name}.png", title=f"{name} metric")
            plots.totals_bar(summary["totals"], out / "totals.png")
    return summary
