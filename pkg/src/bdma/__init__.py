"""Bi-directional manifold alignment of word embeddings with a single invertible mapper."""

__version__ = "0.1.0"
