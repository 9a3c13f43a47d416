"""Confusion tables split by the confidence gate, and derived rates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class Counts:
    TP: int = 0
    FN: int = 0
    FP: int = 0
    TN: int = 0

    @property
    def total(self) -> int:
        return self.TP + self.FN + self.FP + self.TN


@dataclass
class ConfusionTable:
    confident: Counts = field(default_factory=Counts)
    non_confident: Counts = field(default_factory=Counts)

    @property
    def total(self) -> int:
        return self.confident.total + self.non_confident.total

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricSet:
    sensitivity: float | None
    precision: float | None
    accuracy: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def tabulate(predicted, labels, confident=None) -> ConfusionTable:
    predicted = np.asarray(predicted).astype(int).reshape(-1)
    labels = np.asarray(labels).astype(int).reshape(-1)
    confident = np.ones_like(predicted, dtype=bool) if confident is None else np.asarray(confident, dtype=bool).reshape(-1)
    if not (len(predicted) == len(labels) == len(confident)):
        raise ValueError(f"length mismatch: {len(predicted)} predictions, {len(labels)} labels, {len(confident)} flags")

    def block(sel) -> Counts:
        p, y = predicted[sel], labels[sel]
        return Counts(
            TP=int(((p == 1) & (y == 1)).sum()),
            FN=int(((p == 0) & (y == 1)).sum()),
            FP=int(((p == 1) & (y == 0)).sum()),
            TN=int(((p == 0) & (y == 0)).sum()),
        )

    return ConfusionTable(block(confident), block(~confident))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def derive_metrics(table: ConfusionTable | Counts) -> MetricSet:
    """Sensitivity, precision and accuracy from the confident block."""
    c = table.confident if isinstance(table, ConfusionTable) else table
    return MetricSet(
        sensitivity=_ratio(c.TP, c.TP + c.FN),
        precision=_ratio(c.TP, c.TP + c.FP),
        accuracy=_ratio(c.TP + c.TN, c.total),
    )


def deployable(table: ConfusionTable, min_precision: float = 0.96) -> bool:
    """No confident false positives, or confident precision at least ``min_precision``."""
    if table.confident.FP == 0:
        return True
    precision = derive_metrics(table).precision
    return precision is not None and precision >= min_precision
