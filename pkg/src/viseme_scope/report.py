"""SVG figures with CSV mirrors.

Class-count histograms, t-SNE scatter plots (color = viseme, marker =
phoneme) and per-layer accuracy / F1 curves. SVG is written by hand with
fixed number formatting and no timestamps, so identical inputs give
byte-identical files; every CSV row corresponds to one rendered glyph,
bar or curve point.
"""

from __future__ import annotations

import json
import logging
import warnings
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape, quoteattr

import numpy as np
import pandas as pd

from viseme_scope.errors import ConfigError, PaletteIncomplete
from viseme_scope.features import FeatureDataset
from viseme_scope.metrics import EvalReport

logger = logging.getLogger(__name__)

KINDS = ("histogram", "scatter", "line")
MARKERS = ("circle", "square", "triangle", "diamond", "cross", "plus", "star")

# One color per Lee viseme.
DEFAULT_PALETTE: dict[str, str] = {
    "F": "#e6194b",
    "W": "#3cb44b",
    "P": "#ffe119",
    "K": "#4363d8",
    "T": "#f58231",
    "CH": "#911eb4",
    "IY": "#42d4f4",
    "EH": "#f032e6",
    "AA": "#bfef45",
    "AH": "#fabed4",
    "AO": "#469990",
    "UH": "#9a6324",
    "ER": "#800000",
    "sil": "#a9a9a9",
}

DASHES = ("", "6 3", "2 3", "8 3 2 3", "1 2", "10 4")

_MARGIN = 60
_LEGEND_WIDTH = 140
_GLYPH_RADIUS = 4.0


class SparseLayersWarning(UserWarning):
    """A curve covers a single layer or has gaps in its layer range."""


@dataclass(frozen=True)
class PlotSpec:
    kind: str = "scatter"
    palette: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    marker_cycle: tuple[str, ...] = MARKERS
    width: int = 800
    height: int = 600
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    ink: str = "#222222"
    background: str = "#ffffff"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        unknown = [m for m in self.marker_cycle if m not in MARKERS]
        if unknown or not self.marker_cycle:
            raise ConfigError(f"unknown marker(s) {unknown}; choose from {MARKERS}")
        if self.width <= 2 * _MARGIN + _LEGEND_WIDTH or self.height <= 2 * _MARGIN:
            raise ConfigError(f"plot of {self.width}x{self.height} leaves no drawing area")

    @property
    def colors(self) -> set[str]:
        """Every color an emitted SVG may reference."""
        return {*self.palette.values(), self.ink, self.background}

    def color(self, viseme: str) -> str:
        try:
            return self.palette[viseme]
        except KeyError:
            raise PaletteIncomplete([viseme]) from None

    def require(self, visemes: Iterable[str]) -> None:
        missing = sorted(set(visemes) - set(self.palette))
        if missing:
            raise PaletteIncomplete(missing)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PlotSpec:
        data = dict(data)
        if "marker_cycle" in data:
            data["marker_cycle"] = tuple(data["marker_cycle"])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["marker_cycle"] = list(self.marker_cycle)
        return out


def load_plot_spec(path: str | Path) -> PlotSpec:
    """Read a JSON PlotSpec; a partial ``palette`` overrides the default colors."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    data["palette"] = {**DEFAULT_PALETTE, **data.get("palette", {})}
    spec = PlotSpec.from_dict(data)
    spec.validate()
    return spec


@dataclass(frozen=True, eq=False)
class Plot:
    """One figure: ``{kind}_{condition}_{layer}.svg`` plus its CSV mirror."""

    kind: str
    condition: str
    layer: str
    svg: str
    table: pd.DataFrame

    @property
    def stem(self) -> str:
        return f"{self.kind}_{self.condition}_{self.layer}"

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        svg_path = out_dir / f"{self.stem}.svg"
        csv_path = out_dir / f"{self.stem}.csv"
        svg_path.write_text(self.svg, encoding="utf-8", newline="\n")
        self.table.to_csv(csv_path, index=False, lineterminator="\n")
        logger.debug("wrote %s and %s", svg_path.name, csv_path.name)
        return [svg_path, csv_path]


# =============================================================================
# SVG primitives
# =============================================================================


def _n(value: float) -> str:
    return f"{value:.2f}"


class _Canvas:
    def __init__(self, spec: PlotSpec) -> None:
        self.spec = spec
        self.parts: list[str] = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width}" height="{spec.height}" '
            f'viewBox="0 0 {spec.width} {spec.height}">',
            f'  <rect x="0" y="0" width="{spec.width}" height="{spec.height}" fill="{spec.background}"/>',
        ]
        if spec.title:
            self.text(spec.width / 2, _MARGIN / 2, spec.title, anchor="middle", size=16)

    def add(self, element: str) -> None:
        self.parts.append("  " + element)

    def text(self, x: float, y: float, content: str, *, anchor: str = "start", size: int = 12, cls: str = "") -> None:
        attr = f" class={quoteattr(cls)}" if cls else ""
        self.add(
            f'<text{attr} x="{_n(x)}" y="{_n(y)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}" fill="{self.spec.ink}">{escape(content)}</text>'
        )

    def line(self, x1: float, y1: float, x2: float, y2: float) -> None:
        self.add(
            f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" '
            f'stroke="{self.spec.ink}" stroke-width="1"/>'
        )

    def axes(self) -> tuple[float, float, float, float]:
        """Draw the axes and labels; returns the drawing area (left, top, right, bottom)."""
        left, top = _MARGIN, _MARGIN
        right = self.spec.width - _MARGIN - _LEGEND_WIDTH
        bottom = self.spec.height - _MARGIN
        self.line(left, bottom, right, bottom)
        self.line(left, top, left, bottom)
        if self.spec.x_label:
            self.text((left + right) / 2, bottom + 40, self.spec.x_label, anchor="middle")
        if self.spec.y_label:
            self.add(
                f'<text x="{_n(left - 40)}" y="{_n((top + bottom) / 2)}" font-family="sans-serif" '
                f'font-size="12" text-anchor="middle" fill="{self.spec.ink}" '
                f'transform="rotate(-90 {_n(left - 40)} {_n((top + bottom) / 2)})">'
                f"{escape(self.spec.y_label)}</text>"
            )
        return left, top, right, bottom

    def glyph(self, marker: str, x: float, y: float, color: str, cls: str = "glyph", r: float = _GLYPH_RADIUS) -> None:
        self.add(_glyph(marker, x, y, color, cls, r))

    def render(self) -> str:
        return "\n".join([*self.parts, "</svg>"]) + "\n"


def _polygon(points: Iterable[tuple[float, float]]) -> str:
    return " ".join(f"{_n(px)},{_n(py)}" for px, py in points)


def _glyph(marker: str, x: float, y: float, color: str, cls: str, r: float) -> str:
    c = f'class="{cls}"'
    if marker == "circle":
        return f'<circle {c} cx="{_n(x)}" cy="{_n(y)}" r="{_n(r)}" fill="{color}"/>'
    if marker == "square":
        return f'<rect {c} x="{_n(x - r)}" y="{_n(y - r)}" width="{_n(2 * r)}" height="{_n(2 * r)}" fill="{color}"/>'
    if marker == "triangle":
        pts = [(x, y - r), (x + r, y + r), (x - r, y + r)]
        return f'<polygon {c} points="{_polygon(pts)}" fill="{color}"/>'
    if marker == "diamond":
        pts = [(x, y - r), (x + r, y), (x, y + r), (x - r, y)]
        return f'<polygon {c} points="{_polygon(pts)}" fill="{color}"/>'
    if marker == "cross":
        d = f"M{_n(x - r)},{_n(y - r)}L{_n(x + r)},{_n(y + r)}M{_n(x - r)},{_n(y + r)}L{_n(x + r)},{_n(y - r)}"
        return f'<path {c} d="{d}" stroke="{color}" stroke-width="2" fill="none"/>'
    if marker == "plus":
        d = f"M{_n(x - r)},{_n(y)}L{_n(x + r)},{_n(y)}M{_n(x)},{_n(y - r)}L{_n(x)},{_n(y + r)}"
        return f'<path {c} d="{d}" stroke="{color}" stroke-width="2" fill="none"/>'
    if marker == "star":
        angles = np.pi / 2 + np.arange(10) * np.pi / 5
        radii = np.where(np.arange(10) % 2 == 0, r * 1.3, r * 0.55)
        pts = [(x + rad * np.cos(a), y - rad * np.sin(a)) for a, rad in zip(angles, radii)]
        return f'<polygon {c} points="{_polygon(pts)}" fill="{color}"/>'
    raise ConfigError(f"unknown marker {marker!r}")


# =============================================================================
# Histogram
# =============================================================================


def emit_histogram(
    dataset: FeatureDataset,
    spec: PlotSpec | None = None,
    *,
    condition: str = "all",
    layer: int | str = "all",
) -> Plot:
    """One bar per viseme, tallest first (ties by name), labeled with its count."""
    spec = replace(spec or PlotSpec(), kind="histogram")
    spec.validate()
    counts = sorted(Counter(dataset.labels()).items(), key=lambda kv: (-kv[1], kv[0]))
    spec.require(v for v, _ in counts)
    table = pd.DataFrame(counts, columns=["viseme", "count"])

    canvas = _Canvas(spec)
    left, top, right, bottom = canvas.axes()
    if counts:
        peak = counts[0][1]
        slot = (right - left) / len(counts)
        for i, (viseme, count) in enumerate(counts):
            height = (bottom - top) * count / peak
            x = left + i * slot + slot * 0.1
            canvas.add(
                f'<rect class="bar" x="{_n(x)}" y="{_n(bottom - height)}" width="{_n(slot * 0.8)}" '
                f'height="{_n(height)}" fill="{spec.color(viseme)}"/>'
            )
            canvas.text(x + slot * 0.4, bottom - height - 4, str(count), anchor="middle", size=10)
            canvas.text(x + slot * 0.4, bottom + 16, viseme, anchor="middle", size=10)
    return Plot("histogram", condition, str(layer), canvas.render(), table)


# =============================================================================
# Scatter
# =============================================================================


def phoneme_markers(visemes: Sequence[str], phonemes: Sequence[str], marker_cycle: Sequence[str]) -> dict[tuple[str, str], str]:
    """Marker per (viseme, phoneme): phonemes of a viseme take markers in sorted order."""
    by_viseme: dict[str, set[str]] = defaultdict(set)
    for v, p in zip(visemes, phonemes):
        by_viseme[v].add(p)
    markers: dict[tuple[str, str], str] = {}
    for v, members in by_viseme.items():
        if len(members) > len(marker_cycle):
            raise ConfigError(
                f"viseme {v!r} has {len(members)} phonemes but only {len(marker_cycle)} markers"
            )
        for i, p in enumerate(sorted(members)):
            markers[(v, p)] = marker_cycle[i]
    return markers


def emit_scatter(
    coords: np.ndarray,
    labels: Sequence[str],
    spec: PlotSpec | None = None,
    *,
    phonemes: Sequence[str] | None = None,
    condition: str = "all",
    layer: int | str = "all",
) -> Plot:
    """One glyph per point, colored by viseme with a marker per phoneme.

    Coordinates are mapped to the drawing area with a single scale for both
    axes. Without ``phonemes`` every point of a viseme uses the first marker.

    Raises:
        PaletteIncomplete: a viseme has no palette color.
    """
    spec = replace(spec or PlotSpec(), kind="scatter")
    spec.validate()
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] != len(labels):
        raise ConfigError(f"{len(labels)} labels for coordinates of shape {coords.shape}")
    show_phonemes = phonemes is not None
    phonemes = list(phonemes) if phonemes is not None else list(labels)
    spec.require(labels)
    markers = phoneme_markers(labels, phonemes, spec.marker_cycle)

    canvas = _Canvas(spec)
    left, top, right, bottom = canvas.axes()
    pad = 2 * _GLYPH_RADIUS
    if len(labels):
        lo = coords.min(axis=0)
        span = coords.max(axis=0) - lo
        area_w, area_h = right - left - 2 * pad, bottom - top - 2 * pad
        scale = min(area_w / span[0] if span[0] > 0 else np.inf, area_h / span[1] if span[1] > 0 else np.inf)
        if not np.isfinite(scale):
            scale = 1.0
        # Center the data inside the drawing area.
        x0 = left + pad + (area_w - span[0] * scale) / 2
        y0 = bottom - pad - (area_h - span[1] * scale) / 2
        px = x0 + (coords[:, 0] - lo[0]) * scale
        py = y0 - (coords[:, 1] - lo[1]) * scale
    else:
        px = py = np.zeros(0)

    rows = []
    for i, (v, p) in enumerate(zip(labels, phonemes)):
        color, marker = spec.color(v), markers[(v, p)]
        canvas.glyph(marker, px[i], py[i], color)
        rows.append((i, v, p, coords[i, 0], coords[i, 1], color, marker))
    table = pd.DataFrame(rows, columns=["index", "viseme", "phoneme", "x", "y", "color", "marker"])

    # Legend: viseme swatch, then that viseme's phoneme markers.
    lx, ly = spec.width - _LEGEND_WIDTH - _MARGIN / 2, float(_MARGIN)
    for v in dict.fromkeys(labels):
        canvas.add(
            f'<rect class="legend-viseme" x="{_n(lx)}" y="{_n(ly - 9)}" width="10" height="10" fill="{spec.color(v)}"/>'
        )
        canvas.text(lx + 16, ly, v)
        ly += 14
        for (mv, p), marker in sorted(markers.items(), key=lambda kv: kv[0]):
            if mv != v or not show_phonemes:
                continue
            canvas.glyph(marker, lx + 20, ly - 4, spec.color(v), cls="legend-phoneme", r=3.5)
            canvas.text(lx + 30, ly, p, size=10)
            ly += 12
    return Plot("scatter", condition, str(layer), canvas.render(), table)


# =============================================================================
# Layer curves
# =============================================================================


def _check_layers(name: str, layers: Sequence[int]) -> None:
    if len(layers) == 1:
        warnings.warn(f"{name}: only layer {layers[0]} available", SparseLayersWarning, stacklevel=3)
    elif layers and layers[-1] - layers[0] + 1 != len(layers):
        warnings.warn(f"{name}: layers {list(layers)} are not contiguous", SparseLayersWarning, stacklevel=3)


def emit_layer_curves(
    reports: Sequence[EvalReport],
    metric: str = "accuracy",
    spec: PlotSpec | None = None,
    *,
    visemes: Sequence[str] | None = None,
) -> Plot:
    """Metric against layer.

    ``metric="accuracy"`` draws one line per condition; ``metric="f1"`` one
    line per (condition, viseme), colored by viseme and dashed by condition,
    restricted to ``visemes`` when given.

    Warns:
        SparseLayersWarning: a line has a single layer or gaps between layers.
    """
    if metric not in ("accuracy", "f1"):
        raise ConfigError(f"metric must be 'accuracy' or 'f1', got {metric!r}")
    spec = replace(spec or PlotSpec(), kind="line")
    spec.validate()
    conditions = list(dict.fromkeys(r.condition for r in reports))
    by_condition = {c: sorted((r for r in reports if r.condition == c), key=lambda r: r.layer) for c in conditions}

    series: list[tuple[str, str, str, str, list[tuple[int, float]]]] = []
    if metric == "accuracy":
        colors = list(spec.palette.values())
        for i, c in enumerate(conditions):
            points = [(r.layer, r.accuracy) for r in by_condition[c]]
            series.append((c, "all", colors[i % len(colors)], "", points))
        kind = "line-accuracy"
    else:
        selected = list(visemes or ())
        if visemes is None:
            visemes = list(dict.fromkeys(v for r in reports for v in r.per_class))
        spec.require(visemes)
        for i, c in enumerate(conditions):
            for v in visemes:
                points = [(r.layer, r.per_class[v].f1) for r in by_condition[c] if v in r.per_class]
                series.append((c, v, spec.color(v), DASHES[i % len(DASHES)], points))
        kind = "line-f1" + "".join(f"-{v}" for v in selected)
    for c, v, _, _, points in series:
        _check_layers(c if v == "all" else f"{c}/{v}", [layer for layer, _ in points])

    canvas = _Canvas(spec)
    left, top, right, bottom = canvas.axes()
    all_layers = sorted({layer for *_, points in series for layer, _ in points})
    lo, hi = (all_layers[0], all_layers[-1]) if all_layers else (0, 1)
    width = max(hi - lo, 1)

    def to_x(layer: int) -> float:
        if hi == lo:
            return (left + right) / 2
        return left + (right - left) * (layer - lo) / width

    def to_y(value: float) -> float:
        return bottom - (bottom - top) * value

    for layer in all_layers:
        canvas.text(to_x(layer), bottom + 16, str(layer), anchor="middle", size=10)
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        canvas.text(left - 6, to_y(tick) + 4, f"{tick:.2f}", anchor="end", size=10)

    rows = []
    ly = float(_MARGIN)
    lx = spec.width - _LEGEND_WIDTH - _MARGIN / 2
    for c, v, color, dash, points in series:
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        if len(points) > 1:
            pts = _polygon((to_x(layer), to_y(value)) for layer, value in points)
            canvas.add(f'<polyline class="curve" points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>')
        for layer, value in points:
            canvas.glyph("circle", to_x(layer), to_y(value), color, cls="point", r=3.0)
            rows.append((c, v, layer, value))
        canvas.add(
            f'<line class="legend-line" x1="{_n(lx)}" y1="{_n(ly - 4)}" x2="{_n(lx + 18)}" y2="{_n(ly - 4)}" '
            f'stroke="{color}" stroke-width="2"{dash_attr}/>'
        )
        canvas.text(lx + 24, ly, c if v == "all" else f"{v} {c}", size=10)
        ly += 14
    table = pd.DataFrame(rows, columns=["condition", "viseme", "layer", metric])
    return Plot(kind, "all", "all", canvas.render(), table)
