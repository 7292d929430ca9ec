"""Metric computation and report rendering (text tables + jsonl records)."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .adversary import ABSTAIN_MIXED, EXISTS_INCORRECT, FORALL_CORRECT, ProgramState, RobustnessResult
from .dataset import Dataset
from .model import ABSTAIN


@dataclass
class AccuracyMetrics:
    total: int
    predicted: int
    correct: int

    @property
    def accuracy(self) -> float:
        """Accuracy over non-abstained samples; 0 when everything abstains."""
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def coverage(self) -> float:
        return self.predicted / self.total if self.total else 0.0

    @property
    def abstain_rate(self) -> float:
        return 1.0 - self.coverage


def accuracy_metrics(predictor, dataset: Dataset, chunk: int = 256) -> AccuracyMetrics:
    samples = dataset.samples
    predicted = 0
    correct = 0
    for start in range(0, len(samples), chunk):
        part = samples[start : start + chunk]
        states = [ProgramState.from_entry(dataset.programs[s.program_id]) for s in part]
        preds = predictor.predict_many(states, [s.position for s in part])
        for s, pred in zip(part, preds):
            if pred == ABSTAIN:
                continue
            predicted += 1
            if pred == s.label.value:
                correct += 1
    return AccuracyMetrics(len(samples), predicted, correct)


def render_table(headers: list[str], rows: list[list[str]], title: str = "") -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


def summary_table(name: str, acc: AccuracyMetrics, robustness: float | None) -> str:
    headers = ["Model", "Accuracy", "Robustness", "Abstain"]
    row = [name, pct(acc.accuracy), pct(robustness) if robustness is not None else "-", pct(acc.abstain_rate)]
    return render_table(headers, [row])


def breakdown_table(result: RobustnessResult) -> str:
    """Robustness breakdown per original-outcome partition."""
    table = result.breakdown()
    headers = ["Dataset", "Size", "Forall Correct", "Exists Incorrect", "Abstain"]
    rows = []
    for name in ("correct", "abstain", "incorrect"):
        row = table[name]
        if row["count"] == 0 and name == "incorrect":
            continue
        rows.append(
            [
                f"D_{name}",
                pct(row["size"]),
                pct(row[FORALL_CORRECT]),
                pct(row[EXISTS_INCORRECT]),
                pct(row[ABSTAIN_MIXED]),
            ]
        )
    return render_table(headers, rows, title=f"Robustness breakdown (budget {result.budget.sequences})")


def breakdown_fractions_sum(result: RobustnessResult) -> list[float]:
    """Per partition: forall + exists + abstain, which must sum to 1."""
    sums = []
    for row in result.breakdown().values():
        if row["count"] > 0:
            sums.append(row[FORALL_CORRECT] + row[EXISTS_INCORRECT] + row[ABSTAIN_MIXED])
    return sums


def metrics_records(name: str, acc: AccuracyMetrics, result: RobustnessResult | None) -> list[str]:
    """Machine-readable jsonl mirroring the rendered tables."""
    records = [
        json.dumps(
            {
                "record": "summary",
                "model": name,
                "accuracy": acc.accuracy,
                "coverage": acc.coverage,
                "abstain": acc.abstain_rate,
                "robustness": result.robustness if result else None,
                "samples": acc.total,
            },
            sort_keys=True,
        )
    ]
    if result is not None:
        for partition, row in result.breakdown().items():
            records.append(
                json.dumps(
                    {
                        "record": "breakdown",
                        "model": name,
                        "partition": partition,
                        "size": row["size"],
                        "count": row["count"],
                        "forall_correct": row[FORALL_CORRECT],
                        "exists_incorrect": row[EXISTS_INCORRECT],
                        "abstain": row[ABSTAIN_MIXED],
                    },
                    sort_keys=True,
                )
            )
    return records


def robustness_trend(results: dict[str, RobustnessResult]) -> str:
    headers = ["Model", "Robustness"]
    rows = [[name, pct(r.robustness)] for name, r in results.items()]
    return render_table(headers, rows)
