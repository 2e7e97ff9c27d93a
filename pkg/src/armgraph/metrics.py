"""Confusion matrix and detection metrics, malware as the positive class."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyMatrix, LengthMismatch
from .prep import Label

METRIC_NAMES = ("precision", "recall", "f1", "false_alarm_rate", "accuracy")


def is_positive(label) -> bool:
    """The one place that maps dataset labels (malware=0) onto positives."""
    label = int(label)
    if label not in (Label.MALWARE, Label.BENIGN):
        raise ValueError(f"unknown class {label}")
    return label == Label.MALWARE


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


def confusion(predictions, truth) -> ConfusionMatrix:
    predictions = list(predictions)
    truth = list(truth)
    if len(predictions) != len(truth):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truth)} labels")
    tp = fn = fp = tn = 0
    for pred, actual in zip(predictions, truth):
        p, t = is_positive(pred), is_positive(actual)
        if t and p:
            tp += 1
        elif t:
            fn += 1
        elif p:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fn, fp, tn)


def _ratio(num, den):
    return num / den if den else None


@dataclass(frozen=True)
class MetricsReport:
    """Each metric is a float in [0, 1] or ``None`` when its denominator is 0."""

    precision: float | None
    recall: float | None
    f1: float | None
    false_alarm_rate: float | None
    accuracy: float | None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def format_table(self, cm: ConfusionMatrix | None = None) -> str:
        lines = []
        if cm is not None:
            lines += [
                f"{'':>14}{'pred malware':>14}{'pred benign':>14}",
                f"{'true malware':>14}{cm.tp:>14}{cm.fn:>14}",
                f"{'true benign':>14}{cm.fp:>14}{cm.tn:>14}",
                "",
            ]
        for name, value in self.as_dict().items():
            shown = "undefined" if value is None else f"{value * 100:8.2f}%"
            lines.append(f"{name:<18}{shown:>10}")
        return "\n".join(lines) + "\n"

    def format_kv(self, cm: ConfusionMatrix | None = None) -> str:
        items = []
        if cm is not None:
            items += [("tp", cm.tp), ("fn", cm.fn), ("fp", cm.fp), ("tn", cm.tn)]
        items += [(k, "undefined" if v is None else repr(v)) for k, v in self.as_dict().items()]
        return "".join(f"{k}={v}\n" for k, v in items)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        false_alarm_rate=_ratio(cm.fp, cm.tn + cm.fp),
        accuracy=(cm.tp + cm.tn) / cm.total,
    )
