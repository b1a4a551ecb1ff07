"""Pytest tests for confusion matrices, F1 scores and condition comparisons."""

from __future__ import annotations

import pytest

from viseme_scope.errors import ClassIndexMismatch, ConfigError, LengthMismatch, UnknownLabel
from viseme_scope.metrics import (
    F1_COLUMNS,
    ClassScores,
    EvalReport,
    average_delta,
    condition_delta,
    confusion,
    evaluate_predictions,
    improvement_summary,
    micro_recall,
    per_class_f1,
    reports_to_frame,
)


def _report(f1: dict[str, float], condition: str = "clean-av", layer: int = 0) -> EvalReport:
    per_class = {v: ClassScores(precision=s, recall=s, f1=s, support=10) for v, s in f1.items()}
    return EvalReport(
        accuracy=0.0,
        per_class=per_class,
        macro_f1=sum(f1.values()) / len(f1),
        condition=condition,
        layer=layer,
    )


# =============================================================================
# Unit Tests: confusion() and per-class scores
# =============================================================================


class TestConfusion:
    """Unit tests for confusion() function."""

    def test_counts(self) -> None:
        cm = confusion(["P", "P", "K"], ["P", "K", "K"], ["K", "P"])
        assert cm.counts.tolist() == [[1, 0], [1, 1]]
        assert cm.total == 3
        assert cm.accuracy == pytest.approx(2 / 3)

    def test_length_mismatch(self) -> None:
        with pytest.raises(LengthMismatch):
            confusion(["P", "K"], ["P"], ["K", "P"])

    def test_unknown_label(self) -> None:
        with pytest.raises(UnknownLabel) as excinfo:
            confusion(["P"], ["ER"], ["K", "P"])
        assert excinfo.value.label == "ER"

    def test_empty(self) -> None:
        cm = confusion([], [], ["K", "P"])
        assert cm.total == 0
        assert cm.accuracy == 0.0


class TestPerClassF1:
    """Unit tests for per_class_f1() function."""

    def test_precision_recall_f1(self) -> None:
        # A: tp=8, fn=4; B predicted as A twice (fp=2).
        true = ["A"] * 12 + ["B"] * 5
        pred = ["A"] * 8 + ["B"] * 4 + ["A"] * 2 + ["B"] * 3
        scores = per_class_f1(confusion(true, pred, ["A", "B"]))
        assert scores["A"].precision == pytest.approx(0.8)
        assert scores["A"].recall == pytest.approx(8 / 12)
        assert scores["A"].f1 == pytest.approx(0.7273, abs=1e-4)
        assert scores["A"].support == 12

    def test_never_predicted_never_present(self) -> None:
        scores = per_class_f1(confusion(["A", "B"], ["A", "B"], ["A", "B", "C"]))
        assert scores["C"] == ClassScores(0.0, 0.0, 0.0, 0)

    def test_micro_recall_equals_accuracy(self) -> None:
        cm = confusion(["A", "A", "B", "C", "C", "C"], ["A", "B", "B", "C", "A", "C"], ["A", "B", "C"])
        assert micro_recall(cm) == pytest.approx(cm.accuracy)


class TestEvaluatePredictions:
    """Unit tests for evaluate_predictions() function."""

    def test_report_fields(self) -> None:
        report = evaluate_predictions(["A", "B"], ["A", "A"], ["A", "B"], "clean-av", 3)
        assert report.accuracy == 0.5
        assert report.condition == "clean-av"
        assert report.layer == 3
        assert report.class_index == ("A", "B")
        assert report.f1() == {"A": pytest.approx(2 / 3), "B": 0.0}

    def test_zero_support_excluded_from_macro(self) -> None:
        report = evaluate_predictions(["A", "B"], ["A", "B"], ["A", "B", "C"], "c", 0)
        assert report.zero_support == ("C",)
        assert report.macro_f1 == 1.0

    def test_dict_form(self) -> None:
        report = evaluate_predictions(["A", "B", "B"], ["A", "B", "A"], ["A", "B"], "c", 1)
        assert EvalReport.from_dict(report.to_dict()) == report


# =============================================================================
# Unit Tests: condition comparisons
# =============================================================================


class TestConditionDelta:
    """Tests for condition_delta(), average_delta() and improvement_summary()."""

    def test_delta(self) -> None:
        a = _report({"F": 0.5, "ER": 0.2})
        b = _report({"F": 0.6, "ER": 0.1})
        delta = condition_delta(a, b)
        assert delta["F"] == pytest.approx(0.1)
        assert delta["ER"] == pytest.approx(-0.1)

    def test_mismatched_classes(self) -> None:
        with pytest.raises(ClassIndexMismatch):
            condition_delta(_report({"F": 0.5}), _report({"ER": 0.5}))

    def test_mismatched_layers(self) -> None:
        a = _report({"F": 0.5}, "clean-av", layer=3)
        b = _report({"F": 0.7}, "video-only", layer=11)
        with pytest.raises(ConfigError, match="layer 3"):
            condition_delta(a, b)
        with pytest.raises(ConfigError):
            improvement_summary(a, b)

    def test_average_over_shared_layers(self) -> None:
        a = {layer: _report({"F": f1}, layer=layer) for layer, f1 in [(0, 0.2), (1, 0.4), (2, 0.0)]}
        b = {layer: _report({"F": f1}, "video-only", layer) for layer, f1 in [(0, 0.4), (1, 0.8)]}
        assert average_delta(a, b) == {"F": pytest.approx(0.3)}
        assert average_delta(a, {}) == {}

    def test_improvement_summary(self) -> None:
        a = _report({"F": 0.5, "P": 0.5, "IY": 0.4, "ER": 0.0, "sil": 0.2})
        b = _report({"F": 0.7, "P": 0.6, "IY": 0.6, "ER": 0.1, "sil": 0.9})
        summary = improvement_summary(a, b, threshold=0.3)
        assert summary["consonant"] == {"improved": 1, "total": 2, "classes": ["F"]}
        assert summary["vowel"] == {"improved": 2, "total": 2, "classes": ["IY", "ER"]}


class TestReportsToFrame:
    """Tests for the long-format F1 table."""

    def test_columns_and_rows(self) -> None:
        reports = [
            evaluate_predictions(["A", "B"], ["A", "B"], ["A", "B"], "clean-av", 0),
            evaluate_predictions(["A", "B"], ["B", "B"], ["A", "B"], "video-only", 0),
        ]
        frame = reports_to_frame(reports)
        assert list(frame.columns) == F1_COLUMNS
        assert len(frame) == 4
        assert frame.loc[(frame.condition == "video-only") & (frame.viseme == "A"), "f1"].item() == 0.0
