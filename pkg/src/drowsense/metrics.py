"""Sample-level classification metrics: accuracy, precision, recall, false and missing alarm."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ClassCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class ConfusionTally:
    """One-vs-rest counts per class plus the overall confusion table."""
    counts: dict[str, ClassCounts]
    confusion: Counter = field(default_factory=Counter)

    @classmethod
    def from_pairs(cls, truth, predicted, classes=None) -> "ConfusionTally":
        truth, predicted = list(truth), list(predicted)
        if len(truth) != len(predicted):
            raise ValueError("truth and prediction lengths differ")
        if classes is None:
            classes = list(dict.fromkeys(truth))
        counts = {}
        for c in classes:
            tp = sum(t == c and p == c for t, p in zip(truth, predicted))
            fp = sum(t != c and p == c for t, p in zip(truth, predicted))
            fn = sum(t == c and p != c for t, p in zip(truth, predicted))
            counts[c] = ClassCounts(tp, fp, len(truth) - tp - fp - fn, fn)
        return cls(counts, Counter(zip(truth, predicted)))

    @property
    def total(self) -> int:
        return sum(self.confusion.values())

    @property
    def correct(self) -> int:
        return sum(n for (t, p), n in self.confusion.items() if t == p)


def _ratio(num, den):
    # undefined stays undefined; never report 0 for 0/0
    return num / den if den > 0 else None


def class_metrics(c: ClassCounts) -> dict:
    return {
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "recall": _ratio(c.tp, c.tp + c.fn),
        "false_alarm": _ratio(c.fp, c.fp + c.tn),
        "missing_alarm": _ratio(c.fn, c.tp + c.fn),
    }


def compute_metrics(tally: ConfusionTally | ClassCounts) -> dict:
    """Per-class metric dicts (None where a denominator is zero) and the overall accuracy."""
    if isinstance(tally, ClassCounts):
        return class_metrics(tally)
    out = {name: class_metrics(c) for name, c in tally.counts.items()}
    out["overall"] = {"accuracy": _ratio(tally.correct, tally.total)}
    return out
