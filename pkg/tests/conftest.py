"""Shared fixtures: small synthetic corpora and datasets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from viseme_scope.alignment import lee_map
from viseme_scope.features import FeatureDataset, FeatureRecord, build_dataset
from viseme_scope.synthetic import SyntheticSpec, generate_synthetic_corpus, write_synthetic_corpus

# Path to test fixtures
FIXTURES_DIR = Path(__file__).parent / "fixtures"


def make_dataset(
    vectors: np.ndarray,
    visemes: list[str],
    phonemes: list[str] | None = None,
    condition: str = "clean-av",
    layer: int = 0,
) -> FeatureDataset:
    """Build a FeatureDataset directly from vectors and labels."""
    phonemes = phonemes or [v.lower() for v in visemes]
    records = tuple(
        FeatureRecord(
            utterance_id=f"u{i:04d}",
            condition=condition,
            layer=layer,
            viseme=v,
            phoneme=p,
            vector=np.asarray(vec, dtype=np.float64),
            frame_span=(0, 0),
        )
        for i, (vec, v, p) in enumerate(zip(vectors, visemes, phonemes))
    )
    return FeatureDataset(records=records)


@pytest.fixture
def small_spec() -> SyntheticSpec:
    """Two conditions, two layers, 14 classes with 12 tokens each."""
    return SyntheticSpec(
        tokens_per_class=12,
        dim=16,
        conditions={"clean-av": 8.0, "video-only": 3.0},
        layers=(0, 1),
        min_frames=3,
        max_frames=6,
        segments_per_utterance=10,
    )


@pytest.fixture
def small_dataset(small_spec: SyntheticSpec) -> FeatureDataset:
    sequences, segments = generate_synthetic_corpus(small_spec, seed=3)
    return build_dataset(sequences, segments, lee_map())


@pytest.fixture
def small_corpus(tmp_path: Path, small_spec: SyntheticSpec) -> tuple[Path, Path]:
    """(manifest.json, alignment.csv) of a small synthetic corpus on disk."""
    return write_synthetic_corpus(tmp_path / "corpus", small_spec, seed=3)


@pytest.fixture
def blobs() -> tuple[np.ndarray, list[str]]:
    """Three well-separated Gaussian blobs in 10-D, 30 points each."""
    rng = np.random.default_rng(0)
    centers = np.eye(10)[:3] * 20.0
    x = np.vstack([c + rng.standard_normal((30, 10)) for c in centers])
    labels = ["P"] * 30 + ["K"] * 30 + ["ER"] * 30
    return x, labels
