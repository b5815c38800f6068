"""Accuracy, Brier score and 10% CVaR, plus per-split evaluation reports."""

import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass

import numpy as np

REPORT_FIELDS = ("split", "accuracy", "brier", "cvar10", "n")
# metric name -> True when larger is better
MAXIMIZE = {"accuracy": True, "brier": False, "cvar10": False}


@dataclass(frozen=True)
class EvalReport:
    split: str
    accuracy: float
    brier: float
    cvar10: float
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("an evaluation report needs at least one row")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self):
        return [self.split, repr(self.accuracy), repr(self.brier), repr(self.cvar10), str(self.n)]

    @classmethod
    def from_dict(cls, d):
        return cls(d["split"], float(d["accuracy"]), float(d["brier"]), float(d["cvar10"]), int(d["n"]))


def accuracy(preds, targets):
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError("predictions and targets must be non-empty and equally long")
    return float(np.mean(preds == targets))


def brier(probs, onehot):
    """Mean over rows of the squared Euclidean distance between probabilities and one-hot targets.

    Summed with ``math.fsum`` so the value is correctly rounded and does not
    depend on summation order.
    """
    probs = np.asarray(probs, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    if probs.shape != onehot.shape:
        raise ValueError("probability and target matrices must have the same shape")
    if probs.size == 0:
        raise ValueError("brier needs at least one row")
    return math.fsum(((probs - onehot) ** 2).ravel()) / probs.shape[0]


def tail_size(n):
    # ceil(n / 10) in integers; 0.1 * n rounds up spuriously (0.1 * 30 > 3)
    return -(-n // 10)


def cvar10(losses):
    """Mean of the ceil(0.1 n) largest losses.

    The mean is computed exactly in rationals and rounded once, so it never
    depends on order and never leaves the range of the tail (``fsum(3c) / 3``
    can exceed ``c``).
    """
    losses = np.asarray(losses, dtype=float).ravel()
    if losses.size == 0:
        raise ValueError("cvar10 needs at least one loss")
    k = tail_size(losses.size)
    tail = np.sort(losses)[-k:]
    if not np.all(np.isfinite(tail)):
        return float(np.mean(tail))
    return float(sum(map(Fraction, tail.tolist()), Fraction(0)) / k)


def is_better(metric, a, b):
    """True when ``a`` beats ``b`` for this metric (NaN never wins)."""
    if a is None or (isinstance(a, float) and math.isnan(a)):
        return False
    if b is None or (isinstance(b, float) and math.isnan(b)):
        return True
    return a > b if MAXIMIZE[metric] else a < b


def worst_value(metric):
    return -math.inf if MAXIMIZE[metric] else math.inf
