"""Viseme interpretability toolkit for audio-visual speech embeddings."""

__version__ = "0.1.0"
