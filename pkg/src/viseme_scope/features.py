"""Per-viseme feature vectors from frame embeddings and alignments.

Each alignment segment is mapped to the frames whose centers fall inside it,
the first and last third of those frames are dropped to reduce
co-articulation, and the rest are averaged into one [1 x D] token.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np
import pandas as pd

from viseme_scope.alignment import AlignmentSegment, VisemeMap, map_to_viseme
from viseme_scope.container import read_matrix, write_matrix
from viseme_scope.errors import (
    ConfigError,
    EmptyCoverage,
    MissingUtterance,
    NonFiniteValue,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

DEFAULT_FPS = 25.0

CACHE_META_COLUMNS = [
    "utterance_id",
    "condition",
    "layer",
    "viseme",
    "phoneme",
    "first_frame",
    "last_frame",
]

SequenceKey = tuple[str, str, int]


# =============================================================================
# Embedding sequences and the corpus manifest
# =============================================================================


@dataclass(frozen=True)
class ManifestEntry:
    """One EMB1 file of the corpus: an (utterance, condition, layer) triple.

    ``frames`` and ``dim`` are optional expectations checked against the
    container header.
    """

    utterance_id: str
    condition: str
    layer: int
    path: Path
    fps: float = DEFAULT_FPS
    frames: int | None = None
    dim: int | None = None

    @property
    def key(self) -> SequenceKey:
        return (self.utterance_id, self.condition, self.layer)

    def to_dict(self, base_dir: Path | None = None) -> dict[str, Any]:
        path = self.path
        if base_dir is not None and path.is_relative_to(base_dir):
            path = path.relative_to(base_dir)
        out: dict[str, Any] = {
            "utterance_id": self.utterance_id,
            "condition": self.condition,
            "layer": self.layer,
            "fps": self.fps,
            "path": path.as_posix(),
        }
        if self.frames is not None:
            out["frames"] = self.frames
        if self.dim is not None:
            out["dim"] = self.dim
        return out


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    utterance_id: str
    condition: str
    layer: int
    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ShapeMismatch("frames shape (T>=1, D>=1)", 2, self.frames.ndim)
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def key(self) -> SequenceKey:
        return (self.utterance_id, self.condition, self.layer)


def read_embedding_container(stream: BinaryIO, entry: ManifestEntry) -> EmbeddingSequence:
    """Read one EMB1 file and attach the manifest metadata.

    Raises:
        BadMagic, NonFiniteValue: from the container.
        ShapeMismatch: the manifest's ``frames``/``dim`` disagree with the header.
    """
    matrix = read_matrix(stream)
    if entry.frames is not None and entry.frames != matrix.shape[0]:
        raise ShapeMismatch(f"{entry.path} frames", entry.frames, matrix.shape[0])
    if entry.dim is not None and entry.dim != matrix.shape[1]:
        raise ShapeMismatch(f"{entry.path} dim", entry.dim, matrix.shape[1])
    return EmbeddingSequence(
        utterance_id=entry.utterance_id,
        condition=entry.condition,
        layer=entry.layer,
        frames=matrix,
        fps=entry.fps,
    )


def write_embedding_container(stream: BinaryIO, sequence: EmbeddingSequence) -> None:
    write_matrix(stream, sequence.frames)


def read_corpus_manifest(path: str | Path) -> list[ManifestEntry]:
    """Load the JSON corpus manifest; relative paths resolve against its folder.

    Accepts either a bare list of entries or ``{"fps": ..., "entries": [...]}``
    where the top-level fps is the default for entries without one.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    default_fps = DEFAULT_FPS
    if isinstance(raw, dict):
        default_fps = float(raw.get("fps", DEFAULT_FPS))
        raw = raw.get("entries", [])
    entries = []
    for i, item in enumerate(raw):
        try:
            entry_path = Path(item["path"])
            if not entry_path.is_absolute():
                entry_path = path.parent / entry_path
            entries.append(
                ManifestEntry(
                    utterance_id=str(item["utterance_id"]),
                    condition=str(item["condition"]),
                    layer=int(item["layer"]),
                    path=entry_path,
                    fps=float(item.get("fps", default_fps)),
                    frames=item.get("frames"),
                    dim=item.get("dim"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: manifest entry {i} is invalid ({exc})") from exc
    return entries


def write_corpus_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    path = Path(path)
    payload = {
        "fps": DEFAULT_FPS,
        "entries": [e.to_dict(base_dir=path.parent) for e in entries],
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_sequences(entries: Iterable[ManifestEntry]) -> dict[SequenceKey, EmbeddingSequence]:
    sequences: dict[SequenceKey, EmbeddingSequence] = {}
    for entry in entries:
        try:
            with open(entry.path, "rb") as f:
                sequences[entry.key] = read_embedding_container(f, entry)
        except FileNotFoundError:
            logger.error("embedding file %s is missing", entry.path)
            raise MissingUtterance(entry.utterance_id, entry.condition, entry.layer) from None
        except NonFiniteValue:
            logger.error("non-finite value in %s", entry.path)
            raise
    logger.info("loaded %d embedding sequences", len(sequences))
    return sequences


# =============================================================================
# Frame selection and pooling
# =============================================================================


def segment_to_frames(segment: AlignmentSegment, fps: float, n_frames: int) -> range:
    """Frames whose center time (f + 0.5) / fps lies in [start, end).

    Raises:
        EmptyCoverage: no frame center falls inside the segment.
    """
    # Candidate window from the closed form; membership decided on the
    # float centers themselves so boundaries agree with enumeration.
    lo = max(0, math.floor(segment.start * fps - 0.5) - 1)
    hi = min(n_frames, math.ceil(segment.end * fps - 0.5) + 1)
    centers = (np.arange(lo, hi) + 0.5) / fps
    inside = np.flatnonzero((centers >= segment.start) & (centers < segment.end))
    if inside.size == 0:
        raise EmptyCoverage(segment.start, segment.end)
    return range(lo + int(inside[0]), lo + int(inside[-1]) + 1)


def trim_middle_third(frames: Sequence[int]) -> Sequence[int]:
    """Drop the first and last third (k = n // 3 each side); n <= 2 keeps all."""
    n = len(frames)
    if n <= 2:
        return frames
    k = n // 3
    return frames[k : n - k]


def mean_pool(frames: np.ndarray) -> np.ndarray:
    """Row mean accumulated in float64."""
    return np.asarray(frames, dtype=np.float64).mean(axis=0)


# =============================================================================
# Dataset
# =============================================================================


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    utterance_id: str
    condition: str
    layer: int
    viseme: str
    phoneme: str
    vector: np.ndarray
    frame_span: tuple[int, int]


@dataclass(frozen=True)
class SkippedSegment:
    utterance_id: str
    condition: str
    layer: int
    phoneme: str
    start: float
    end: float
    reason: str = "EmptyCoverage"


@dataclass(frozen=True)
class FeatureDataset:
    records: tuple[FeatureRecord, ...] = ()
    skipped: tuple[SkippedSegment, ...] = ()
    class_counts: Counter[str] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "skipped", tuple(self.skipped))
        object.__setattr__(self, "class_counts", Counter(r.viseme for r in self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def conditions(self) -> list[str]:
        return list(dict.fromkeys(r.condition for r in self.records))

    @property
    def layers(self) -> list[int]:
        return sorted({r.layer for r in self.records})

    def select(self, condition: str | None = None, layer: int | None = None) -> FeatureDataset:
        records = [
            r
            for r in self.records
            if (condition is None or r.condition == condition)
            and (layer is None or r.layer == layer)
        ]
        skipped = [
            s
            for s in self.skipped
            if (condition is None or s.condition == condition)
            and (layer is None or s.layer == layer)
        ]
        return FeatureDataset(records=tuple(records), skipped=tuple(skipped))

    def subset(self, indices: Iterable[int]) -> FeatureDataset:
        return FeatureDataset(
            records=tuple(self.records[i] for i in indices), skipped=self.skipped
        )

    def matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, 0))
        return np.vstack([r.vector for r in self.records])

    def labels(self) -> list[str]:
        return [r.viseme for r in self.records]

    def phonemes(self) -> list[str]:
        return [r.phoneme for r in self.records]


def _utterance_records(
    segments: Sequence[AlignmentSegment],
    sequences: Mapping[SequenceKey, EmbeddingSequence],
    pairs: Sequence[tuple[str, int]],
    visemes: Sequence[str],
) -> tuple[list[list[FeatureRecord]], list[SkippedSegment]]:
    per_pair: list[list[FeatureRecord]] = []
    skipped: list[SkippedSegment] = []
    for condition, layer in pairs:
        records: list[FeatureRecord] = []
        for segment, viseme in zip(segments, visemes):
            seq = sequences[(segment.utterance_id, condition, layer)]
            try:
                span = segment_to_frames(segment, seq.fps, seq.n_frames)
            except EmptyCoverage:
                skipped.append(
                    SkippedSegment(
                        segment.utterance_id, condition, layer,
                        segment.phoneme, segment.start, segment.end,
                    )
                )
                continue
            kept = trim_middle_third(span)
            records.append(
                FeatureRecord(
                    utterance_id=segment.utterance_id,
                    condition=condition,
                    layer=layer,
                    viseme=viseme,
                    phoneme=segment.phoneme,
                    vector=mean_pool(seq.frames[kept.start : kept.stop]),
                    frame_span=(kept.start, kept.stop - 1),
                )
            )
        per_pair.append(records)
    return per_pair, skipped


def build_dataset(
    sequences: Mapping[SequenceKey, EmbeddingSequence],
    segments: Sequence[AlignmentSegment],
    viseme_map: VisemeMap,
    *,
    conditions: Sequence[str] | None = None,
    layers: Sequence[int] | None = None,
    jobs: int = 1,
) -> FeatureDataset:
    """One FeatureRecord per (segment, condition, layer) with frame coverage.

    Conditions and layers default to every one present in ``sequences``.
    Records are ordered by condition, then layer, then segment, whatever the
    number of jobs. Segments with no covered frame are recorded as skipped.

    Raises:
        UnmappedPhoneme: a segment's phoneme is missing from ``viseme_map``.
        MissingUtterance: a requested (utterance, condition, layer) is absent.
    """
    if conditions is None:
        conditions = list(dict.fromkeys(key[1] for key in sequences))
    if layers is None:
        layers = sorted({key[2] for key in sequences})
    pairs = [(c, l) for c in conditions for l in layers]

    by_utterance: dict[str, list[AlignmentSegment]] = defaultdict(list)
    for segment in segments:
        by_utterance[segment.utterance_id].append(segment)
    for utterance_id in by_utterance:
        for condition, layer in pairs:
            if (utterance_id, condition, layer) not in sequences:
                raise MissingUtterance(utterance_id, condition, layer)

    groups = list(by_utterance.values())
    group_visemes = [[map_to_viseme(s.phoneme, viseme_map) for s in g] for g in groups]

    def work(i: int) -> tuple[list[list[FeatureRecord]], list[SkippedSegment]]:
        return _utterance_records(groups[i], sequences, pairs, group_visemes[i])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, range(len(groups))))
    else:
        results = [work(i) for i in range(len(groups))]

    records: list[FeatureRecord] = []
    for p in range(len(pairs)):
        for per_pair, _ in results:
            records.extend(per_pair[p])
    skipped = [s for _, group_skipped in results for s in group_skipped]
    if skipped:
        logger.warning("skipped %d segment(s) with no frame coverage", len(skipped))
    return FeatureDataset(records=tuple(records), skipped=tuple(skipped))


def balanced_subsample(dataset: FeatureDataset, per_class: int = 500, seed: int = 0) -> FeatureDataset:
    """Draw min(per_class, available) records per viseme without replacement.

    Classes are visited in sorted order so the draw depends only on the seed;
    the output keeps the input record order.
    """
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = defaultdict(list)
    for i, record in enumerate(dataset.records):
        by_class[record.viseme].append(i)
    chosen: list[int] = []
    for viseme in sorted(by_class):
        indices = np.asarray(by_class[viseme])
        if indices.size > per_class:
            indices = rng.choice(indices, size=per_class, replace=False)
        chosen.extend(int(i) for i in indices)
    return dataset.subset(sorted(chosen))


# =============================================================================
# Dataset cache
# =============================================================================


def dataset_to_frame(dataset: FeatureDataset) -> pd.DataFrame:
    meta = pd.DataFrame(
        [
            (r.utterance_id, r.condition, r.layer, r.viseme, r.phoneme, *r.frame_span)
            for r in dataset.records
        ],
        columns=CACHE_META_COLUMNS,
    )
    if not dataset.records:
        return meta
    dims = {r.vector.shape[0] for r in dataset.records}
    if len(dims) != 1:
        raise ShapeMismatch("cache vector dims", min(dims), max(dims))
    matrix = dataset.matrix()
    vectors = pd.DataFrame(matrix, columns=[f"v{i}" for i in range(matrix.shape[1])])
    return pd.concat([meta, vectors], axis=1)


def skipped_cache_path(path: str | Path) -> Path:
    """Sidecar next to the feature cache: features.csv -> features.skipped.csv."""
    path = Path(path)
    return path.with_name(f"{path.stem}.skipped{path.suffix}")


def write_dataset_cache(dataset: FeatureDataset, path: str | Path) -> list[Path]:
    """Write the feature cache and its skipped-segment sidecar; returns both paths.

    The sidecar is always written, header-only when nothing was skipped.
    """
    path = Path(path)
    dataset_to_frame(dataset).to_csv(path, index=False, lineterminator="\n")
    sidecar = skipped_cache_path(path)
    skipped = pd.DataFrame(
        [astuple(s) for s in dataset.skipped],
        columns=[f.name for f in fields(SkippedSegment)],
    )
    skipped.to_csv(sidecar, index=False, lineterminator="\n")
    return [path, sidecar]


def _read_skipped(path: Path) -> tuple[SkippedSegment, ...]:
    if not path.is_file():
        return ()
    df = pd.read_csv(
        path,
        dtype={"utterance_id": str, "condition": str, "phoneme": str, "reason": str},
        keep_default_na=False,
    )
    return tuple(
        SkippedSegment(
            utterance_id=row.utterance_id,
            condition=row.condition,
            layer=int(row.layer),
            phoneme=row.phoneme,
            start=float(row.start),
            end=float(row.end),
            reason=row.reason,
        )
        for row in df.itertuples(index=False)
    )


def read_dataset_cache(path: str | Path) -> FeatureDataset:
    """Read a feature cache, with its skipped-segment sidecar when present."""
    df = pd.read_csv(
        path,
        dtype={"utterance_id": str, "condition": str, "viseme": str, "phoneme": str},
        keep_default_na=False,
    )
    vector_columns = [c for c in df.columns if c not in CACHE_META_COLUMNS]
    matrix = df[vector_columns].to_numpy(dtype=np.float64)
    records = tuple(
        FeatureRecord(
            utterance_id=row.utterance_id,
            condition=row.condition,
            layer=int(row.layer),
            viseme=row.viseme,
            phoneme=row.phoneme,
            vector=matrix[i],
            frame_span=(int(row.first_frame), int(row.last_frame)),
        )
        for i, row in enumerate(df[CACHE_META_COLUMNS].itertuples(index=False))
    )
    return FeatureDataset(records=records, skipped=_read_skipped(skipped_cache_path(path)))
