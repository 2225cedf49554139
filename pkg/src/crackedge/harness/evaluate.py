"""Confusion-matrix evaluation and the structured report emitted by the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone

from ..errors import EmptyDataset, IoError
from ..model_io import Label, LabeledSample
from ..runtime.timing import LatencyStats


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int  # crack predicted crack
    fp: int  # intact predicted crack
    fn: int  # crack predicted intact
    tn: int  # intact predicted intact

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0


@dataclass(frozen=True)
class EvalReport:
    matrix: ConfusionMatrix
    accuracy: float
    model_name: str
    dataset_name: str
    timestamp: str
    latency: LatencyStats | None = None


def evaluate(predict_fn, samples: list[LabeledSample], model_name: str = "",
             dataset_name: str = "", latency: LatencyStats | None = None) -> EvalReport:
    """Run predict_fn over every sample in order and tally the matrix.

    predict_fn: ImageBuffer -> (probs, Label). Latency stats, when the caller
    measured them separately, ride along into the report.
    """
    if not samples:
        raise EmptyDataset("evaluation needs at least one sample")
    tp = fp = fn = tn = 0
    for sample in samples:
        _, predicted = predict_fn(sample.image)
        actual_pos = sample.label is Label.POSITIVE
        predicted_pos = predicted is Label.POSITIVE
        if actual_pos and predicted_pos:
            tp += 1
        elif actual_pos:
            fn += 1
        elif predicted_pos:
            fp += 1
        else:
            tn += 1
    matrix = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
    return EvalReport(
        matrix=matrix,
        accuracy=matrix.accuracy,
        model_name=model_name,
        dataset_name=dataset_name,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        latency=latency,
    )


def report_to_json(report: EvalReport) -> str:
    doc = {
        "model": report.model_name,
        "dataset": report.dataset_name,
        "timestamp": report.timestamp,
        "tp": report.matrix.tp,
        "fp": report.matrix.fp,
        "fn": report.matrix.fn,
        "tn": report.matrix.tn,
        "accuracy": report.accuracy,
        "latency": report.latency.as_dict() if report.latency else None,
    }
    return json.dumps(doc, indent=2) + "\n"


def write_report(report: EvalReport, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(report_to_json(report))
    except OSError as e:
        raise IoError(f"cannot write report {path}: {e}") from e
