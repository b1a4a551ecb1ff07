"""Classification metrics for probe evaluation.

Confusion matrices, per-viseme precision/recall/F1, macro-F1 and the
condition comparisons built on them (per-layer F1 deltas, their average
over layers, and counts of classes improving beyond a relative threshold).
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
import pandas as pd

from viseme_scope.alignment import CONSONANT_VISEMES, VOWEL_VISEMES
from viseme_scope.errors import ClassIndexMismatch, ConfigError, LengthMismatch, UnknownLabel

logger = logging.getLogger(__name__)

F1_COLUMNS = ["condition", "layer", "viseme", "precision", "recall", "f1", "support"]


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray
    class_index: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class: dict[str, ClassScores]
    macro_f1: float
    condition: str
    layer: int
    # Classes with no true samples; excluded from macro_f1.
    zero_support: tuple[str, ...] = ()

    @property
    def class_index(self) -> tuple[str, ...]:
        return tuple(self.per_class)

    def f1(self) -> dict[str, float]:
        return {v: s.f1 for v, s in self.per_class.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "condition": self.condition,
            "layer": self.layer,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "zero_support": list(self.zero_support),
            "per_class": {v: asdict(s) for v, s in self.per_class.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalReport:
        return cls(
            accuracy=float(data["accuracy"]),
            per_class={v: ClassScores(**s) for v, s in data["per_class"].items()},
            macro_f1=float(data["macro_f1"]),
            condition=str(data["condition"]),
            layer=int(data["layer"]),
            zero_support=tuple(data.get("zero_support", ())),
        )


def confusion(
    true_labels: Sequence[str], predicted_labels: Sequence[str], class_index: Sequence[str]
) -> ConfusionMatrix:
    """Tally (true, predicted) pairs.

    Raises:
        LengthMismatch: the label lists differ in length.
        UnknownLabel: a label is not in ``class_index``.
    """
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatch(len(true_labels), len(predicted_labels))
    lookup = {v: i for i, v in enumerate(class_index)}
    counts = np.zeros((len(lookup), len(lookup)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in lookup:
            raise UnknownLabel(t)
        if p not in lookup:
            raise UnknownLabel(p)
        counts[lookup[t], lookup[p]] += 1
    return ConfusionMatrix(counts, tuple(class_index))


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def per_class_f1(cm: ConfusionMatrix) -> dict[str, ClassScores]:
    """Precision, recall, F1 and support per class; 0/0 is taken as 0."""
    tp = np.diag(cm.counts)
    predicted = cm.counts.sum(axis=0)
    actual = cm.counts.sum(axis=1)
    scores: dict[str, ClassScores] = {}
    for i, viseme in enumerate(cm.class_index):
        precision = _ratio(tp[i], predicted[i])
        recall = _ratio(tp[i], actual[i])
        if precision + recall == 0:
            logger.warning("F1 for %s is 0/0; reported as 0", viseme)
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        scores[viseme] = ClassScores(float(precision), float(recall), float(f1), int(actual[i]))
    return scores


def micro_recall(cm: ConfusionMatrix) -> float:
    """Support-weighted mean recall; equals accuracy."""
    actual = cm.counts.sum(axis=1)
    recall = np.divide(np.diag(cm.counts), actual, out=np.zeros(len(actual)), where=actual > 0)
    return float(np.sum(recall * actual) / actual.sum()) if actual.sum() else 0.0


def evaluate_predictions(
    true_labels: Sequence[str],
    predicted_labels: Sequence[str],
    class_index: Sequence[str],
    condition: str,
    layer: int,
) -> EvalReport:
    cm = confusion(true_labels, predicted_labels, class_index)
    per_class = per_class_f1(cm)
    zero_support = tuple(v for v, s in per_class.items() if s.support == 0)
    if zero_support:
        logger.warning("classes with no test samples excluded from macro-F1: %s", list(zero_support))
    counted = [s.f1 for v, s in per_class.items() if v not in zero_support]
    return EvalReport(
        accuracy=cm.accuracy,
        per_class=per_class,
        macro_f1=float(np.mean(counted)) if counted else 0.0,
        condition=condition,
        layer=layer,
        zero_support=zero_support,
    )


# =============================================================================
# Condition comparisons
# =============================================================================


def condition_delta(report_a: EvalReport, report_b: EvalReport) -> dict[str, float]:
    """F1 of B minus F1 of A per viseme, in A's class order.

    Both reports must come from the same layer.

    Raises:
        ConfigError: the reports are from different layers.
        ClassIndexMismatch: the reports cover different visemes.
    """
    if report_a.layer != report_b.layer:
        raise ConfigError(
            f"cannot compare layer {report_a.layer} ({report_a.condition}) "
            f"with layer {report_b.layer} ({report_b.condition})"
        )
    if set(report_a.per_class) != set(report_b.per_class):
        raise ClassIndexMismatch(
            f"{sorted(report_a.per_class)} vs {sorted(report_b.per_class)}"
        )
    return {v: report_b.per_class[v].f1 - s.f1 for v, s in report_a.per_class.items()}


def average_delta(
    reports_a: Mapping[int, EvalReport], reports_b: Mapping[int, EvalReport]
) -> dict[str, float]:
    """Per-viseme mean F1 delta (B - A) over the layers both conditions cover."""
    layers = sorted(set(reports_a) & set(reports_b))
    if not layers:
        return {}
    deltas = [condition_delta(reports_a[layer], reports_b[layer]) for layer in layers]
    return {v: float(np.mean([d[v] for d in deltas])) for v in deltas[0]}


def improvement_summary(
    report_a: EvalReport, report_b: EvalReport, threshold: float = 0.3
) -> dict[str, dict[str, Any]]:
    """Per group (vowel / consonant), the classes whose F1 grows by more than ``threshold`` relative to A.

    A class going from F1 0 to a positive F1 counts as improved.
    """
    deltas = condition_delta(report_a, report_b)
    summary: dict[str, dict[str, Any]] = {}
    for group, members in (("vowel", VOWEL_VISEMES), ("consonant", CONSONANT_VISEMES)):
        classes = [v for v in report_a.per_class if v in members]
        improved = []
        for v in classes:
            base = report_a.per_class[v].f1
            relative = deltas[v] / base if base > 0 else (np.inf if deltas[v] > 0 else 0.0)
            if relative > threshold:
                improved.append(v)
        summary[group] = {"improved": len(improved), "total": len(classes), "classes": improved}
    return summary


def reports_to_frame(reports: Iterable[EvalReport]) -> pd.DataFrame:
    """Long-format per-class table with columns ``condition,layer,viseme,precision,recall,f1,support``."""
    rows = [
        (r.condition, r.layer, v, s.precision, s.recall, s.f1, s.support)
        for r in reports
        for v, s in r.per_class.items()
    ]
    return pd.DataFrame(rows, columns=F1_COLUMNS)
