"""Pytest tests for SVG figures and their CSV mirrors."""

from __future__ import annotations

import json
import re
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import make_dataset
from viseme_scope.errors import ConfigError, PaletteIncomplete
from viseme_scope.features import FeatureDataset
from viseme_scope.metrics import ClassScores, EvalReport
from viseme_scope.report import (
    DEFAULT_PALETTE,
    PlotSpec,
    SparseLayersWarning,
    emit_histogram,
    emit_layer_curves,
    emit_scatter,
    load_plot_spec,
    phoneme_markers,
)

COLOR_RE = re.compile(r'(?:fill|stroke)="(#[0-9a-fA-F]{6})"')


def _colors(svg: str) -> set[str]:
    return set(COLOR_RE.findall(svg))


def _curve_reports(conditions: list[str], layers: list[int]) -> list[EvalReport]:
    reports = []
    for ci, c in enumerate(conditions):
        for layer in layers:
            score = 0.2 + 0.1 * ci + 0.05 * layer
            reports.append(
                EvalReport(
                    accuracy=score,
                    per_class={
                        v: ClassScores(score, score, score, 10) for v in ("F", "ER", "P")
                    },
                    macro_f1=score,
                    condition=c,
                    layer=layer,
                )
            )
    return reports


# =============================================================================
# Unit Tests: PlotSpec
# =============================================================================


class TestPlotSpec:
    """Tests for PlotSpec and load_plot_spec()."""

    def test_default_palette_covers_lee(self) -> None:
        assert len(PlotSpec().palette) == 14

    def test_missing_color(self) -> None:
        with pytest.raises(PaletteIncomplete) as excinfo:
            PlotSpec(palette={"F": "#000000"}).require(["F", "ER", "CH"])
        assert excinfo.value.missing == ["CH", "ER"]

    def test_unknown_marker(self) -> None:
        with pytest.raises(ConfigError):
            PlotSpec(marker_cycle=("circle", "blob")).validate()

    def test_partial_palette_file(self, tmp_path: Path) -> None:
        path = tmp_path / "plot.json"
        path.write_text(json.dumps({"palette": {"ER": "#000000"}, "title": "map"}))
        spec = load_plot_spec(path)
        assert spec.palette["ER"] == "#000000"
        assert spec.palette["F"] == DEFAULT_PALETTE["F"]
        assert spec.title == "map"


# =============================================================================
# Unit Tests: emit_histogram()
# =============================================================================


class TestHistogram:
    """Unit tests for emit_histogram() function."""

    def test_bars_sorted_by_count(self) -> None:
        ds = make_dataset(np.zeros((6, 2)), ["ER", "P", "P", "K", "K", "P"])
        plot = emit_histogram(ds)
        assert plot.table.to_dict("list") == {"viseme": ["P", "K", "ER"], "count": [3, 2, 1]}
        assert plot.svg.count('class="bar"') == 3
        assert plot.stem == "histogram_all_all"

    def test_colors_from_palette(self, small_dataset: FeatureDataset) -> None:
        spec = PlotSpec()
        plot = emit_histogram(small_dataset, spec)
        assert _colors(plot.svg) <= spec.colors

    def test_viseme_without_color(self) -> None:
        ds = make_dataset(np.zeros((2, 2)), ["P", "XX"])
        with pytest.raises(PaletteIncomplete):
            emit_histogram(ds)


# =============================================================================
# Unit Tests: emit_scatter()
# =============================================================================


class TestScatter:
    """Unit tests for emit_scatter() function."""

    @pytest.fixture
    def points(self) -> tuple[np.ndarray, list[str], list[str]]:
        coords = np.random.default_rng(0).normal(size=(12, 2))
        labels = ["P"] * 4 + ["K"] * 4 + ["ER"] * 4
        phonemes = ["b", "p", "m", "b", "k", "g", "k", "ng", "er", "er", "er", "er"]
        return coords, labels, phonemes

    def test_one_glyph_per_csv_row(self, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, phonemes = points
        plot = emit_scatter(coords, labels, phonemes=phonemes, condition="clean-av", layer=4)
        assert plot.svg.count('class="glyph"') == len(plot.table) == 12
        assert list(plot.table.columns) == ["index", "viseme", "phoneme", "x", "y", "color", "marker"]
        assert plot.stem == "scatter_clean-av_4"

    def test_colors_subset_of_palette(self, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, phonemes = points
        spec = PlotSpec()
        plot = emit_scatter(coords, labels, spec, phonemes=phonemes)
        assert _colors(plot.svg) <= spec.colors
        assert set(plot.table["color"]) == {DEFAULT_PALETTE[v] for v in ("P", "K", "ER")}

    def test_byte_identical(self, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, phonemes = points
        a = emit_scatter(coords, labels, phonemes=phonemes)
        b = emit_scatter(coords.copy(), list(labels), phonemes=list(phonemes))
        assert a.svg == b.svg
        pd.testing.assert_frame_equal(a.table, b.table)

    def test_phoneme_legend_only_with_phonemes(self, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, phonemes = points
        assert emit_scatter(coords, labels).svg.count('class="legend-phoneme"') == 0
        # b/p/m + k/g/ng + er
        assert emit_scatter(coords, labels, phonemes=phonemes).svg.count('class="legend-phoneme"') == 7
        assert emit_scatter(coords, labels).svg.count('class="legend-viseme"') == 3

    def test_label_count_mismatch(self, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, _ = points
        with pytest.raises(ConfigError):
            emit_scatter(coords, labels[:-1])

    def test_palette_incomplete(self, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, _ = points
        with pytest.raises(PaletteIncomplete):
            emit_scatter(coords, labels, PlotSpec(palette={"P": "#000000"}))

    def test_markers_in_sorted_phoneme_order(self) -> None:
        markers = phoneme_markers(["P", "P", "P"], ["p", "b", "m"], ("circle", "square", "triangle"))
        assert markers == {("P", "b"): "circle", ("P", "m"): "square", ("P", "p"): "triangle"}

    def test_too_many_phonemes(self) -> None:
        with pytest.raises(ConfigError):
            phoneme_markers(["P", "P"], ["p", "b"], ("circle",))

    def test_write(self, tmp_path: Path, points: tuple[np.ndarray, list[str], list[str]]) -> None:
        coords, labels, phonemes = points
        paths = emit_scatter(coords, labels, phonemes=phonemes).write(tmp_path / "fig")
        assert [p.name for p in paths] == ["scatter_all_all.svg", "scatter_all_all.csv"]
        assert len(pd.read_csv(paths[1])) == 12


# =============================================================================
# Unit Tests: emit_layer_curves()
# =============================================================================


class TestLayerCurves:
    """Unit tests for emit_layer_curves() function."""

    def test_f1_curves_per_condition_and_viseme(self) -> None:
        reports = _curve_reports(["clean-av", "audio-only", "video-only"], [0, 1, 2])
        plot = emit_layer_curves(reports, "f1", visemes=["F", "ER"])
        assert plot.svg.count('class="curve"') == 6
        assert plot.svg.count('class="point"') == len(plot.table) == 18
        assert plot.kind == "line-f1-F-ER"
        assert list(plot.table.columns) == ["condition", "viseme", "layer", "f1"]

    def test_accuracy_curves(self) -> None:
        reports = _curve_reports(["clean-av", "video-only"], [0, 1, 2, 3])
        plot = emit_layer_curves(reports, "accuracy")
        assert plot.svg.count('class="curve"') == 2
        assert plot.stem == "line-accuracy_all_all"
        assert plot.table["accuracy"].iloc[0] == pytest.approx(0.2)

    def test_colors_subset_of_palette(self) -> None:
        spec = PlotSpec()
        plot = emit_layer_curves(_curve_reports(["a", "b"], [0, 1]), "f1", spec)
        assert _colors(plot.svg) <= spec.colors

    def test_single_layer_warns(self) -> None:
        with pytest.warns(SparseLayersWarning):
            plot = emit_layer_curves(_curve_reports(["clean-av"], [5]), "accuracy")
        assert plot.svg.count('class="curve"') == 0
        assert plot.svg.count('class="point"') == 1

    def test_gap_warns(self) -> None:
        with pytest.warns(SparseLayersWarning, match="not contiguous"):
            emit_layer_curves(_curve_reports(["clean-av"], [0, 2, 3]), "accuracy")

    def test_contiguous_layers_do_not_warn(self) -> None:
        with warnings.catch_warnings():
            warnings.simplefilter("error", SparseLayersWarning)
            emit_layer_curves(_curve_reports(["clean-av"], [0, 1, 2]), "accuracy")

    def test_unknown_metric(self) -> None:
        with pytest.raises(ConfigError):
            emit_layer_curves(_curve_reports(["clean-av"], [0, 1]), "recall")
