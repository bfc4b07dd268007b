"""Gesture and movement classification heads, evaluation and debouncing."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .landmarks import N_FEATURES, WINDOW_LEN, MotionWindow

GESTURE_LABELS = ("no_hand", "open", "closed", "occupied")
# the network never sees absent hands; no_hand is decided by rule
GESTURE_NET_LABELS = GESTURE_LABELS[1:]
MOVEMENT_LABELS = ("low_urgency", "medium_urgency", "high_urgency", "go_away")


class LabelMismatchError(ValueError):
    pass


def _check_labels(bundle, expected) -> None:
    if tuple(bundle.labels) != tuple(expected):
        raise LabelMismatchError(f"model labels {list(bundle.labels)} do not match {list(expected)}")


def classify_gesture(bundle, pose) -> tuple[str, dict]:
    """Label one normalized pose, or ``None`` for a frame without a hand."""
    _check_labels(bundle, GESTURE_NET_LABELS)
    if pose is None:
        return "no_hand", {name: float(name == "no_hand") for name in GESTURE_LABELS}
    x = np.asarray(pose, dtype=float).reshape(1, N_FEATURES)
    p = bundle.predict_proba(x)[0]
    probs = {"no_hand": 0.0, **{name: float(v) for name, v in zip(GESTURE_NET_LABELS, p)}}
    return GESTURE_NET_LABELS[int(np.argmax(p))], probs


def classify_movement(bundle, window) -> tuple[str, dict]:
    _check_labels(bundle, MOVEMENT_LABELS)
    frames = window.frames if isinstance(window, MotionWindow) else np.asarray(window, dtype=float)
    if frames.shape != (WINDOW_LEN, N_FEATURES):
        raise ValueError(f"movement window must be {WINDOW_LEN}x{N_FEATURES}, got {frames.shape}")
    p = bundle.predict_proba(frames[None])[0]
    return MOVEMENT_LABELS[int(np.argmax(p))], {name: float(v) for name, v in zip(MOVEMENT_LABELS, p)}


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true labels, columns predictions."""

    labels: tuple
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def precision(self) -> dict:
        col = self.counts.sum(axis=0)
        return {lab: float(self.counts[i, i] / col[i]) if col[i] else 0.0 for i, lab in enumerate(self.labels)}

    def recall(self) -> dict:
        row = self.counts.sum(axis=1)
        return {lab: float(self.counts[i, i] / row[i]) if row[i] else 0.0 for i, lab in enumerate(self.labels)}

    def normalized(self) -> np.ndarray:
        row = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, row, out=np.zeros(self.counts.shape), where=row > 0)

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "labels": list(self.labels),
            "precision": self.precision(),
            "recall": self.recall(),
        }

    def write(self, out_dir, stem: str = "eval") -> list[Path]:
        """Counts CSV, row-normalized heatmap CSV and a JSON summary."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{stem}_confusion.csv", out_dir / f"{stem}_heatmap.csv", out_dir / f"{stem}_summary.json"]
        for path, table in zip(paths[:2], (self.counts, self.normalized())):
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["true\\pred", *self.labels])
                for lab, row in zip(self.labels, table):
                    w.writerow([lab, *[repr(v.item()) if isinstance(v, np.floating) else int(v) for v in row]])
        paths[2].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return paths


def confusion_matrix(y_true, y_pred, labels) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    n = len(labels)
    if y_true.min() < 0 or y_true.max() >= n or y_pred.min() < 0 or y_pred.max() >= n:
        raise ValueError("label index outside the label set")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(tuple(labels), counts)


def evaluate(model, x, y) -> ConfusionMatrix:
    """Confusion matrix of ``model.predict(x)`` against ``y``.

    ``model`` is anything with ``labels`` and a batch ``predict`` returning
    label indices, e.g. a loaded :class:`~handover.neurnet.ModelBundle`.
    """
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return confusion_matrix(y, model.predict(np.asarray(x, dtype=float)), model.labels)


class ConfidenceGate:
    """Debounce per-tick classifications.

    A label becomes actionable once it has been the top class with
    probability >= ``threshold`` on ``ticks`` consecutive ticks, and stays
    actionable while that keeps holding.
    """

    def __init__(self, threshold: float = 0.7, ticks: int = 3):
        self.threshold = threshold
        self.ticks = ticks
        self.reset()

    def reset(self) -> None:
        self._label = None
        self._run = 0

    def update(self, label, confidence: float):
        if label is None or confidence < self.threshold:
            self.reset()
            return None
        if label == self._label:
            self._run += 1
        else:
            self._label, self._run = label, 1
        return label if self._run >= self.ticks else None
