"""Synthetic corpora with known viseme cluster structure.

Stands in for exported model embeddings at desk scale. Every viseme gets a
fixed direction, every condition/layer a separation scale, and every token a
Gaussian draw around its class (plus phoneme) mean. The frames a token's
segment covers carry that vector in the middle third and a blend with the
neighbouring token at the edges, so trimming recovers the token exactly.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from viseme_scope.alignment import AlignmentSegment, load_viseme_map, viseme_groups, write_alignment_csv
from viseme_scope.container import save_matrix
from viseme_scope.errors import ConfigError
from viseme_scope.features import (
    DEFAULT_FPS,
    EmbeddingSequence,
    ManifestEntry,
    SequenceKey,
    write_corpus_manifest,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    """Cluster layout of a synthetic corpus.

    Attributes:
        viseme_map: Builtin name or path of the taxonomy supplying classes and phonemes.
        tokens_per_class: Tokens generated per viseme.
        class_tokens: Per-viseme overrides of ``tokens_per_class``.
        dim: Embedding dimension.
        conditions: Condition name -> separation scale (distance of class
            means from the origin in noise-std units).
        layers: Layer indices to emit.
        layer_gain: Separation grows by ``1 + layer_gain * layer``.
        noise_std: Per-token isotropic noise.
        phoneme_spread: Offset of each phoneme mean from its viseme mean,
            relative to the separation scale.
        min_frames / max_frames: Frames per segment (inclusive).
        segments_per_utterance: Tokens packed into one utterance.
        fps: Frame rate.
    """

    viseme_map: str = "lee"
    tokens_per_class: int = 100
    class_tokens: dict[str, int] = field(default_factory=dict)
    dim: int = 32
    conditions: dict[str, float] = field(default_factory=lambda: {"clean-av": 8.0})
    layers: tuple[int, ...] = (0,)
    layer_gain: float = 0.0
    noise_std: float = 1.0
    phoneme_spread: float = 0.0
    min_frames: int = 3
    max_frames: int = 9
    segments_per_utterance: int = 20
    fps: float = DEFAULT_FPS

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not self.conditions:
            raise ConfigError("at least one condition is required")
        if not self.layers:
            raise ConfigError("at least one layer is required")
        if not 3 <= self.min_frames <= self.max_frames:
            raise ConfigError("need 3 <= min_frames <= max_frames")
        if self.noise_std < 0 or self.fps <= 0 or self.segments_per_utterance < 1:
            raise ConfigError("noise_std >= 0, fps > 0 and segments_per_utterance >= 1 required")

    def scale(self, condition: str, layer: int) -> float:
        return self.conditions[condition] * (1.0 + self.layer_gain * layer)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SyntheticSpec:
        data = dict(data)
        if "layers" in data:
            data["layers"] = tuple(int(layer) for layer in data["layers"])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["layers"] = list(self.layers)
        return out


def _unit_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Orthonormal rows when dim allows, otherwise random unit vectors."""
    gaussian = rng.standard_normal((dim, count))
    if dim >= count:
        q, _ = np.linalg.qr(gaussian)
        return q.T[:count]
    return (gaussian / np.linalg.norm(gaussian, axis=0)).T


def generate_synthetic_corpus(
    spec: SyntheticSpec, seed: int = 0
) -> tuple[dict[SequenceKey, EmbeddingSequence], list[AlignmentSegment]]:
    """Generate embedding sequences and matching alignment segments."""
    spec.validate()
    rng = np.random.default_rng(seed)
    groups = viseme_groups(load_viseme_map(spec.viseme_map))
    visemes = list(groups)
    phonemes = [p for v in visemes for p in groups[v]]

    directions = dict(zip(visemes, _unit_directions(rng, len(visemes), spec.dim)))
    offsets = dict(zip(phonemes, rng.standard_normal((len(phonemes), spec.dim))))
    for p, vec in offsets.items():
        offsets[p] = vec / np.linalg.norm(vec) * spec.phoneme_spread

    tokens: list[tuple[str, str]] = []
    for viseme in visemes:
        count = spec.class_tokens.get(viseme, spec.tokens_per_class)
        choices = rng.choice(len(groups[viseme]), size=count)
        tokens.extend((viseme, groups[viseme][c]) for c in choices)
    order = rng.permutation(len(tokens))
    tokens = [tokens[i] for i in order]
    lengths = rng.integers(spec.min_frames, spec.max_frames + 1, size=len(tokens))

    n_utt = -(-len(tokens) // spec.segments_per_utterance)
    utterances = [
        range(u * spec.segments_per_utterance, min(len(tokens), (u + 1) * spec.segments_per_utterance))
        for u in range(n_utt)
    ]

    segments: list[AlignmentSegment] = []
    for u, token_ids in enumerate(utterances):
        frame = 0
        for t in token_ids:
            start, end = frame / spec.fps, (frame + int(lengths[t])) / spec.fps
            segments.append(
                AlignmentSegment(f"synth{u:05d}", tokens[t][1], round(start, 6), round(end, 6))
            )
            frame += int(lengths[t])

    sequences: dict[SequenceKey, EmbeddingSequence] = {}
    for condition in spec.conditions:
        for layer in spec.layers:
            scale = spec.scale(condition, layer)
            means = np.stack(
                [scale * (directions[v] + offsets[p]) for v, p in tokens]
            )
            vectors = means + spec.noise_std * rng.standard_normal(means.shape)
            for u, token_ids in enumerate(utterances):
                ids = list(token_ids)
                utt_frames = []
                for j, t in enumerate(ids):
                    n = int(lengths[t])
                    k = n // 3
                    block = np.repeat(vectors[t][np.newaxis, :], n, axis=0)
                    prev_vec = vectors[ids[j - 1]] if j > 0 else vectors[t]
                    next_vec = vectors[ids[j + 1]] if j + 1 < len(ids) else vectors[t]
                    block[:k] = 0.5 * (vectors[t] + prev_vec)
                    block[n - k :] = 0.5 * (vectors[t] + next_vec)
                    utt_frames.append(block)
                utt_id = f"synth{u:05d}"
                sequences[(utt_id, condition, layer)] = EmbeddingSequence(
                    utterance_id=utt_id,
                    condition=condition,
                    layer=layer,
                    frames=np.vstack(utt_frames).astype(np.float32),
                    fps=spec.fps,
                )
    logger.info(
        "generated %d tokens in %d utterances for %d condition(s) x %d layer(s)",
        len(tokens), n_utt, len(spec.conditions), len(spec.layers),
    )
    return sequences, segments


def write_synthetic_corpus(out_dir: str | Path, spec: SyntheticSpec, seed: int = 0) -> tuple[Path, Path]:
    """Write EMB1 files, ``manifest.json`` and ``alignment.csv`` under ``out_dir``.

    Returns:
        Paths of the manifest and the alignment CSV.
    """
    out_dir = Path(out_dir)
    emb_dir = out_dir / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)
    sequences, segments = generate_synthetic_corpus(spec, seed)

    entries = []
    for (utt_id, condition, layer), seq in sequences.items():
        path = emb_dir / f"{utt_id}_{condition}_{layer}.emb1"
        save_matrix(path, seq.frames)
        entries.append(
            ManifestEntry(
                utterance_id=utt_id,
                condition=condition,
                layer=layer,
                path=path,
                fps=seq.fps,
                frames=seq.n_frames,
                dim=seq.dim,
            )
        )
    manifest_path = out_dir / "manifest.json"
    write_corpus_manifest(manifest_path, entries)
    alignment_path = out_dir / "alignment.csv"
    alignment_path.write_bytes(write_alignment_csv(segments))
    return manifest_path, alignment_path
