"""Accuracy against elapsed steps, confusion matrices and full-sequence accuracy."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import extract_features
from .errors import EarlyRecError, InvalidInputError
from .recurrent import forward_sequence

DEFAULT_NUM_CHECKPOINTS = 7


@dataclass
class EvalReport:
    checkpoints: list
    accuracy: list
    confusion: list  # one N x N count matrix per checkpoint, rows = truth
    recall: list  # per checkpoint, per class (None where the class is absent)
    precision: list
    full_video: dict
    num_classes: int
    predictions: list = field(default_factory=list, repr=False)  # per checkpoint, per sequence

    def to_dict(self) -> dict:
        return {
            "checkpoints": list(self.checkpoints),
            "accuracy": list(self.accuracy),
            "confusion": [np.asarray(c).tolist() for c in self.confusion],
            "per_class": {"recall": self.recall, "precision": self.precision},
            "full_video": self.full_video,
        }


def default_checkpoints(lengths, count: int = DEFAULT_NUM_CHECKPOINTS) -> list:
    """``count`` evenly spaced elapsed-step values ending at the shortest length."""
    t_min = int(min(lengths))
    pts = sorted({max(1, (i * t_min) // count) for i in range(1, count + 1)})
    return pts


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EARLYREC_THREADS", "1")))
    except ValueError:
        return 1


def sequence_probs(model, encoder, sequences) -> list:
    """Per-step class probabilities (T, N) for each sequence; future head ignored."""

    def run(seq):
        return forward_sequence(model, extract_features(encoder, seq)).probs

    n = _threads()
    if n == 1:
        return [run(s) for s in sequences]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(run, sequences))


def _per_class(conf: np.ndarray):
    rows = conf.sum(axis=1)
    cols = conf.sum(axis=0)
    diag = np.diag(conf)
    recall = [float(diag[k] / rows[k]) if rows[k] else None for k in range(len(diag))]
    precision = [float(diag[k] / cols[k]) if cols[k] else None for k in range(len(diag))]
    return recall, precision


def _full_video(probs, labels, num_classes) -> dict:
    correct = np.zeros(num_classes, dtype=np.int64)
    count = np.zeros(num_classes, dtype=np.int64)
    for P, y in zip(probs, labels):
        count[y] += 1
        correct[y] += int(np.argmax(P[-1]) == y)
    per_class = [float(correct[k] / count[k]) if count[k] else None for k in range(num_classes)]
    return {
        "per_class": per_class,
        "counts": count.tolist(),
        "overall": float(correct.sum() / count.sum()) if count.sum() else None,
        "aligned_to_elapsed_time": False,
        "note": "prediction at each sequence's own final step; not a common elapsed time",
    }


def evaluate(model, encoder, sequences, checkpoints=None, num_classes: int | None = None) -> EvalReport:
    """Evaluate the prediction after ``c`` observed steps for every checkpoint ``c``."""
    sequences = list(sequences)
    if not sequences:
        raise InvalidInputError("empty test set")
    N = num_classes or model.num_classes
    t_min = min(s.T for s in sequences)
    if checkpoints is None:
        checkpoints = default_checkpoints([s.T for s in sequences])
    checkpoints = [int(c) for c in checkpoints]
    for c in checkpoints:
        if not 1 <= c <= t_min:
            raise InvalidInputError(f"checkpoint {c} outside [1, {t_min}] (shortest test sequence)")
    probs = sequence_probs(model, encoder, sequences)
    labels = [s.label for s in sequences]
    accuracy, confusion, recall, precision, predictions = [], [], [], [], []
    for c in checkpoints:
        # argmax takes the lowest index among ties
        preds = [int(np.argmax(P[c - 1])) for P in probs]
        conf = np.zeros((N, N), dtype=np.int64)
        for y, p in zip(labels, preds):
            conf[y, p] += 1
        accuracy.append(float(np.trace(conf) / len(labels)))
        confusion.append(conf)
        r, p = _per_class(conf)
        recall.append(r)
        precision.append(p)
        predictions.append(preds)
    return EvalReport(checkpoints, accuracy, confusion, recall, precision, _full_video(probs, labels, N), N,
                      predictions)


def full_video_accuracy(model, encoder, sequences, num_classes: int | None = None) -> dict:
    sequences = list(sequences)
    N = num_classes or model.num_classes
    probs = sequence_probs(model, encoder, sequences)
    return _full_video(probs, [s.label for s in sequences], N)


def write_report(report: EvalReport, csv_path, json_path) -> None:
    """Accuracy curve as CSV and everything else as one JSON document."""
    try:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["checkpoint", "accuracy"])
            for c, a in zip(report.checkpoints, report.accuracy):
                w.writerow([c, repr(a)])
        Path(json_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise EarlyRecError(f"could not write report to {exc.filename}: {exc.strerror}") from exc


def read_report(json_path) -> dict:
    return json.loads(Path(json_path).read_text())
