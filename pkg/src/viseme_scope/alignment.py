"""Forced-alignment segments and phoneme-to-viseme taxonomies.

Reads the flat Alignment CSV (``utterance_id,phoneme,start_s,end_s``),
normalizes ARPAbet labels and maps them to viseme classes. Lee's 14-class
mapping is compiled in; other taxonomies load from the viseme map file form:

    # comment
    F: f v
    W: r w
"""

from __future__ import annotations

import io
import logging
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import BinaryIO

import pandas as pd

from viseme_scope.errors import (
    ConfigError,
    EmptyLabel,
    MalformedRow,
    NonMonotoneTimes,
    OverlappingSegments,
    UnknownCharacters,
    UnmappedPhoneme,
)

logger = logging.getLogger(__name__)

ALIGNMENT_COLUMNS = ["utterance_id", "phoneme", "start_s", "end_s"]

SILENCE = "sil"

_PHONEME_RE = re.compile(r"[a-z]{1,3}")
_PARSER_LINE_RE = re.compile(r"line (\d+)")

# Rows of Lee's table in printed order. Duplicates keep the first row.
LEE_TABLE: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("F", ("f", "v")),
    ("W", ("r", "w")),
    ("P", ("b", "p", "m")),
    ("K", ("g", "k", "ng", "n", "l", "y", "hh")),
    ("T", ("t", "d", "s", "z", "dh", "th")),
    ("CH", ("ch", "jh", "sh", "zh")),
    ("IY", ("iy", "ih")),
    ("EH", ("eh", "ey", "ae")),
    ("AA", ("aa", "aw", "ay")),
    ("AH", ("ah",)),
    ("AO", ("ao", "oy", "ow")),
    ("UH", ("uh", "uw")),
    ("ER", ("er",)),
    ("sil", ("sil",)),
)

VOWEL_VISEMES = frozenset({"IY", "EH", "AA", "AH", "AO", "UH", "ER"})
CONSONANT_VISEMES = frozenset({"F", "W", "P", "K", "T", "CH"})


@dataclass(frozen=True)
class VisemeMap:
    """A many-to-one phoneme → viseme function.

    ``entries`` preserves insertion order; ``visemes`` lists the classes in
    order of first appearance, which is the class order used downstream.
    """

    name: str
    entries: Mapping[str, str]
    visemes: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        frozen = MappingProxyType(dict(self.entries))
        object.__setattr__(self, "entries", frozen)
        object.__setattr__(self, "visemes", tuple(dict.fromkeys(frozen.values())))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VisemeMap):
            return NotImplemented
        return self.name == other.name and list(self.entries.items()) == list(
            other.entries.items()
        )

    def __hash__(self) -> int:
        return hash((self.name, tuple(self.entries.items())))

    def __contains__(self, phoneme: str) -> bool:
        return phoneme in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class AlignmentSegment:
    """One phoneme occurrence; times in seconds, half-open [start, end)."""

    utterance_id: str
    phoneme: str
    start: float
    end: float

    @property
    def sort_key(self) -> tuple[str, float, float]:
        return (self.utterance_id, self.start, self.end)


def normalize_phoneme(raw: str) -> str:
    """Normalize an aligner label to a bare lowercase ARPAbet symbol.

    Strips surrounding whitespace and slashes, lowercases, and removes
    trailing stress digits (0/1/2).

    Raises:
        EmptyLabel: nothing is left after stripping.
        UnknownCharacters: the residue is not 1-3 ASCII letters.
    """
    label = raw.strip().strip("/").strip().lower().rstrip("012")
    if not label:
        raise EmptyLabel(raw)
    if not _PHONEME_RE.fullmatch(label):
        raise UnknownCharacters(raw, label)
    return label


def _build_map(name: str, rows: Iterable[tuple[str, Iterable[str]]]) -> VisemeMap:
    entries: dict[str, str] = {}
    for viseme, phonemes in rows:
        for phoneme in phonemes:
            if phoneme in entries:
                logger.debug(
                    "%s: %r already mapped to %s, ignoring %s",
                    name, phoneme, entries[phoneme], viseme,
                )
                continue
            entries[phoneme] = viseme
    return VisemeMap(name=name, entries=entries)


def lee_map() -> VisemeMap:
    """Return Lee's phoneme-to-viseme mapping (39 phonemes + sil, 14 visemes)."""
    return _build_map("lee", LEE_TABLE)


BUILTIN_MAPS = {"lee": lee_map}


def map_to_viseme(phoneme: str, viseme_map: VisemeMap) -> str:
    try:
        return viseme_map.entries[phoneme]
    except KeyError:
        raise UnmappedPhoneme(phoneme, viseme_map.name) from None


def viseme_groups(viseme_map: VisemeMap) -> dict[str, list[str]]:
    """Preimage of each viseme, in class order then entry order."""
    groups: dict[str, list[str]] = {v: [] for v in viseme_map.visemes}
    for phoneme, viseme in viseme_map.entries.items():
        groups[viseme].append(phoneme)
    return groups


# =============================================================================
# Viseme map file
# =============================================================================


def parse_viseme_map(text: str, name: str) -> VisemeMap:
    """Parse ``VISEME: ph1 ph2 ...`` lines. ``#`` starts a comment."""
    rows: list[tuple[str, list[str]]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        viseme, sep, rest = line.partition(":")
        viseme = viseme.strip()
        if not sep or not viseme:
            raise MalformedRow(line_no, "expected 'VISEME: phoneme ...'")
        rows.append((viseme, [normalize_phoneme(tok) for tok in rest.split()]))
    return _build_map(name, rows)


def format_viseme_map(viseme_map: VisemeMap) -> str:
    lines = [f"# viseme map: {viseme_map.name}"]
    for viseme, phonemes in viseme_groups(viseme_map).items():
        lines.append(f"{viseme}: {' '.join(phonemes)}")
    return "\n".join(lines) + "\n"


def load_viseme_map(source: str | Path) -> VisemeMap:
    """Load a builtin map by name (``lee``) or a viseme map file by path."""
    if isinstance(source, str) and source in BUILTIN_MAPS:
        return BUILTIN_MAPS[source]()
    path = Path(source)
    if not path.is_file():
        raise ConfigError(
            f"viseme map {str(source)!r} is neither a builtin "
            f"({', '.join(BUILTIN_MAPS)}) nor a file"
        )
    return parse_viseme_map(path.read_text(encoding="utf-8"), name=path.stem)


# =============================================================================
# Alignment CSV
# =============================================================================


def _parse_time(value: str, line_no: int, column: str) -> float:
    try:
        seconds = float(value)
    except ValueError:
        raise MalformedRow(line_no, f"{column} {value!r} is not a number") from None
    if not seconds >= 0.0 or seconds == float("inf"):
        raise MalformedRow(line_no, f"{column} {value!r} must be finite and non-negative")
    return seconds


def parse_alignment_csv(source: bytes | BinaryIO) -> list[AlignmentSegment]:
    """Parse an Alignment CSV into segments sorted by (utterance, start).

    Raises:
        MalformedRow: wrong header, field count, empty field or bad number.
        NonMonotoneTimes: a row whose end is not after its start.
        OverlappingSegments: two segments of one utterance intersect.
    """
    data = source if isinstance(source, bytes) else source.read()
    try:
        df = pd.read_csv(
            io.BytesIO(data),
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        raise MalformedRow(1, "missing header") from None
    except pd.errors.ParserError as exc:
        match = _PARSER_LINE_RE.search(str(exc))
        raise MalformedRow(int(match.group(1)) if match else 0, str(exc)) from None

    # Physical line of the header and of each row; pandas drops blank lines.
    line_numbers = [i for i, line in enumerate(data.split(b"\n"), start=1) if line.rstrip(b"\r")]
    if len(line_numbers) != len(df) + 1:
        line_numbers = list(range(1, len(df) + 2))

    if list(df.columns) != ALIGNMENT_COLUMNS:
        raise MalformedRow(line_numbers[0], f"header must be {','.join(ALIGNMENT_COLUMNS)}")

    segments: list[AlignmentSegment] = []
    for line_no, row in zip(line_numbers[1:], df.itertuples(index=False)):
        if any(not str(value).strip() for value in row):
            raise MalformedRow(line_no, "empty field")
        try:
            phoneme = normalize_phoneme(row.phoneme)
        except (EmptyLabel, UnknownCharacters) as exc:
            raise MalformedRow(line_no, str(exc)) from exc
        start = _parse_time(row.start_s, line_no, "start_s")
        end = _parse_time(row.end_s, line_no, "end_s")
        if end <= start:
            raise NonMonotoneTimes(line_no, start, end)
        segments.append(
            AlignmentSegment(
                utterance_id=row.utterance_id.strip(),
                phoneme=phoneme,
                start=start,
                end=end,
            )
        )

    segments.sort(key=lambda s: s.sort_key)
    for prev, seg in zip(segments, segments[1:]):
        if prev.utterance_id == seg.utterance_id and seg.start < prev.end:
            raise OverlappingSegments(
                seg.utterance_id, (prev.start, prev.end), (seg.start, seg.end)
            )
    logger.debug("parsed %d alignment segments", len(segments))
    return segments


def read_alignment(path: str | Path) -> list[AlignmentSegment]:
    return parse_alignment_csv(Path(path).read_bytes())


def write_alignment_csv(segments: Iterable[AlignmentSegment]) -> bytes:
    df = pd.DataFrame(
        [(s.utterance_id, s.phoneme, s.start, s.end) for s in segments],
        columns=ALIGNMENT_COLUMNS,
    )
    return df.to_csv(index=False, lineterminator="\n").encode("utf-8")
