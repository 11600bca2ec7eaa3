"""Confusion matrix and the four evaluation metrics. Spam is the positive class."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if len(labels) == 0:
        raise ValueError("cannot build a confusion matrix from zero samples")
    tn = fp = fn = tp = 0
    for pred, real in zip(predictions, labels):
        if real == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        else:
            if pred == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tn=tn, fp=fp, fn=fn, tp=tp)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return (cm.tn + cm.tp) / cm.total


def recall(cm: ConfusionMatrix) -> float:
    denom = cm.tp + cm.fn
    return cm.tp / denom if denom else 0.0


def precision(cm: ConfusionMatrix) -> float:
    denom = cm.tp + cm.fp
    return cm.tp / denom if denom else 0.0


def f1(precision_value: float, recall_value: float) -> float:
    denom = precision_value + recall_value
    return 2.0 * precision_value * recall_value / denom if denom else 0.0


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    cm: ConfusionMatrix

    @classmethod
    def from_predictions(
        cls, predictions: Sequence[int], labels: Sequence[int]
    ) -> "MetricsReport":
        cm = confusion(predictions, labels)
        p = precision(cm)
        r = recall(cm)
        return cls(accuracy=accuracy(cm), precision=p, recall=r, f1=f1(p, r), cm=cm)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {
                "tn": self.cm.tn,
                "fp": self.cm.fp,
                "fn": self.cm.fn,
                "tp": self.cm.tp,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        cm = ConfusionMatrix(**obj["confusion"])
        return cls(
            accuracy=obj["accuracy"],
            precision=obj["precision"],
            recall=obj["recall"],
            f1=obj["f1"],
            cm=cm,
        )
