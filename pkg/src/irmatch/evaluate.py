"""Precision/recall/F1 over labeled scores and threshold-sweep curves.

Degenerate denominators yield None (reported as JSON null), never a
0-by-convention. The pairing protocol that turns an embedding index plus
ground-truth pairs into labeled scores lives here too, so eval reports
are self-describing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput
from .matcher import EmbeddingIndex, cosine


@dataclass
class LabeledScore:
    query_id: str
    candidate_id: str
    score: float
    is_clone: bool


@dataclass
class Metrics:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def precision_recall_f1(items: Sequence[LabeledScore], threshold: float) -> Metrics:
    """Counts and P/R/F1 for decision = score >= threshold."""
    if not items:
        raise EmptyInput("no labeled scores")
    tp = fp = fn = 0
    for item in items:
        predicted = item.score >= threshold
        if predicted and item.is_clone:
            tp += 1
        elif predicted and not item.is_clone:
            fp += 1
        elif not predicted and item.is_clone:
            fn += 1
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    if precision is None or recall is None or (precision + recall) == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(tp, fp, fn, precision, recall, f1)


def threshold_sweep(
    items: Sequence[LabeledScore],
    grid: Sequence[float],
) -> tuple[list[tuple[float, Metrics]], Optional[float]]:
    """Metrics per threshold plus the argmax-F1 threshold (first on ties).
    The grid must be sorted ascending."""
    if not items:
        raise EmptyInput("no labeled scores")
    grid = list(grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("sweep grid must be sorted ascending")
    points = [(t, precision_recall_f1(items, t)) for t in grid]
    best_threshold = None
    best_f1 = -1.0
    for t, metrics in points:
        if metrics.f1 is not None and metrics.f1 > best_f1:
            best_f1 = metrics.f1
            best_threshold = t
    return points, best_threshold


def sweep_grid(spec: str) -> list[float]:
    """Parse "start:stop:step" into an inclusive ascending grid."""
    start, stop, step = (float(part) for part in spec.split(":"))
    if step <= 0:
        raise ValueError("sweep step must be positive")
    n = int(round((stop - start) / step))
    grid = [round(start + i * step, 10) for i in range(n + 1)]
    return [g for g in grid if g <= stop + 1e-9]


def pair_protocol_scores(
    index: EmbeddingIndex,
    pairs: Sequence[tuple[str, str, str]],
    n_negatives: int = 9,
    rng: Optional[np.random.Generator] = None,
) -> list[LabeledScore]:
    """1-positive-N-negatives protocol: each binary query is scored
    against its true source and N sources sampled from other groups."""
    rng = rng if rng is not None else np.random.default_rng(0)
    by_id = {entry.doc_id: entry.vector for entry in index.entries}
    group_of = {binary_id: group for binary_id, _, group in pairs}
    group_of.update({source_id: group for _, source_id, group in pairs})
    sources = [(source_id, group) for _, source_id, group in pairs]
    items: list[LabeledScore] = []
    for binary_id, source_id, group in pairs:
        query = by_id[binary_id]
        items.append(LabeledScore(binary_id, source_id, cosine(query, by_id[source_id]), True))
        foreign = [s for s, g in sources if g != group]
        if not foreign:
            continue
        picks = rng.choice(len(foreign), size=min(n_negatives, len(foreign)), replace=False)
        for pick in picks:
            candidate = foreign[pick]
            items.append(LabeledScore(binary_id, candidate, cosine(query, by_id[candidate]), False))
    return items


def write_scores(path: str | Path, items: Sequence[LabeledScore]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({
                "query_id": item.query_id,
                "candidate_id": item.candidate_id,
                "score": item.score,
                "is_clone": item.is_clone,
            }) + "\n")


def read_scores(path: str | Path) -> list[LabeledScore]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            items.append(LabeledScore(
                query_id=obj["query_id"],
                candidate_id=obj["candidate_id"],
                score=float(obj["score"]),
                is_clone=bool(obj["is_clone"]),
            ))
    return items


def _metrics_dict(metrics: Metrics) -> dict:
    return {
        "true_positives": metrics.true_positives,
        "false_positives": metrics.false_positives,
        "false_negatives": metrics.false_negatives,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
    }


def write_report(
    path: str | Path,
    items: Sequence[LabeledScore],
    threshold: float,
    grid: Optional[Sequence[float]] = None,
    protocol: str = "1-positive-9-negatives",
    csv_path: Optional[str | Path] = None,
) -> dict:
    report: dict = {
        "protocol": protocol,
        "threshold": threshold,
        "n_scores": len(items),
        **_metrics_dict(precision_recall_f1(items, threshold)),
    }
    if grid:
        points, best = threshold_sweep(items, grid)
        report["sweep"] = [
            {"threshold": t, **_metrics_dict(m)} for t, m in points
        ]
        report["best_f1_threshold"] = best
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["threshold", "precision", "recall", "f1",
                                 "true_positives", "false_positives", "false_negatives"])
                for t, m in points:
                    writer.writerow([t, m.precision, m.recall, m.f1,
                                     m.true_positives, m.false_positives, m.false_negatives])
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report
