"""Monolingual word-vector sets: ``.vec`` parsing, writing and preprocessing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import VecFormatError

logger = logging.getLogger(__name__)

DEFAULT_MAX_VOCAB = 200_000


@dataclass(frozen=True)
class EmbeddingSet:
    """A vocabulary with one float64 row per word.

    ``words[i]`` labels ``matrix[i]``. Tokens are byte-exact; no case folding.
    """

    words: tuple[str, ...]
    matrix: np.ndarray
    meta: str = ""
    skipped_duplicates: int = 0
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise VecFormatError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
        if len(self.words) == 0:
            raise VecFormatError("embedding set is empty")
        if len(self.words) != matrix.shape[0]:
            raise VecFormatError(
                f"{len(self.words)} words but {matrix.shape[0]} matrix rows")
        if matrix.shape[1] < 1:
            raise VecFormatError("embedding dimension must be positive")
        if not np.all(np.isfinite(matrix)):
            raise VecFormatError("embedding matrix contains non-finite values")
        index = {w: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise VecFormatError("embedding tokens are not unique")
        matrix = matrix.copy()
        matrix.flags.writeable = False
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def lookup(self, token: str) -> int | None:
        return self._index.get(token)

    def rows(self, tokens: Iterable[str]) -> np.ndarray:
        return self.matrix[[self._index[t] for t in tokens]]

    def replace(self, matrix: np.ndarray, meta: str | None = None) -> EmbeddingSet:
        return EmbeddingSet(self.words, matrix, self.meta if meta is None else meta,
                            self.skipped_duplicates)


def lookup(e: EmbeddingSet, token: str) -> int | None:
    return e.lookup(token)


def parse_vec(stream: IO[str], max_vocab: int = DEFAULT_MAX_VOCAB, meta: str = "") -> EmbeddingSet:
    """Read a ``.vec`` text stream, keeping at most ``max_vocab`` words in file order.

    Later occurrences of a token already seen are skipped and counted.
    Reading stops once ``max_vocab`` unique rows have been collected, so rows
    beyond the cut-off are never validated.
    """
    if max_vocab < 1:
        raise ValueError("max_vocab must be positive")
    header = stream.readline()
    fields = header.split()
    if len(fields) != 2:
        raise VecFormatError(f"malformed header {header.rstrip()!r}: expected '<count> <dim>'")
    try:
        count, dim = int(fields[0]), int(fields[1])
    except ValueError:
        raise VecFormatError(f"malformed header {header.rstrip()!r}") from None
    if count < 0 or dim < 1:
        raise VecFormatError(f"malformed header {header.rstrip()!r}")

    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    duplicates = 0
    for lineno, line in enumerate(stream, start=2):
        if len(words) >= max_vocab:
            break
        line = line.rstrip("\r\n").rstrip(" ")
        if not line:
            continue
        parts = line.split(" ")
        token, values = parts[0], parts[1:]
        if len(values) != dim:
            raise VecFormatError(
                f"line {lineno}: token {token!r} has {len(values)} values, expected {dim}")
        try:
            vec = np.array(values, dtype=np.float64)
        except ValueError:
            raise VecFormatError(f"line {lineno}: unparsable value for token {token!r}") from None
        if not np.all(np.isfinite(vec)):
            raise VecFormatError(f"line {lineno}: non-finite value for token {token!r}")
        if token in seen:
            duplicates += 1
            continue
        seen.add(token)
        words.append(token)
        rows.append(vec)

    if not words:
        raise VecFormatError("no usable rows")
    if duplicates:
        logger.warning("skipped %d duplicate token(s) in %s", duplicates, meta or "embedding stream")
    return EmbeddingSet(tuple(words), np.vstack(rows), meta, duplicates)


def load_vec(path: str | Path, max_vocab: int = DEFAULT_MAX_VOCAB) -> EmbeddingSet:
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        return parse_vec(f, max_vocab=max_vocab, meta=str(path))


def write_vec(e: EmbeddingSet, stream: IO[str]) -> None:
    """Write ``e`` in ``.vec`` format with 6 significant digits per value."""
    stream.write(f"{len(e)} {e.dim}\n")
    for word, row in zip(e.words, e.matrix):
        stream.write(word + " " + " ".join(f"{v:.6g}" for v in row) + "\n")


def save_vec(e: EmbeddingSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", errors="surrogateescape", newline="\n") as f:
        write_vec(e, f)


def _unit_rows(matrix: np.ndarray, words: tuple[str, ...], stage: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise VecFormatError(f"zero-norm row for token {words[bad[0]]!r} at {stage}")
    return matrix / norms[:, None]


def center_and_normalize(matrix: np.ndarray, words: tuple[str, ...] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(centered, final)``: the matrix after normalize->center, and after the last renorm."""
    if not words:
        words = tuple(str(i) for i in range(matrix.shape[0]))
    unit = _unit_rows(np.asarray(matrix, dtype=np.float64), words, "first normalization")
    centered = unit - unit.mean(axis=0)
    return centered, _unit_rows(centered, words, "second normalization")


def preprocess(e: EmbeddingSet) -> EmbeddingSet:
    """Unit-normalize rows, subtract the column mean, unit-normalize again."""
    _, final = center_and_normalize(e.matrix, e.words)
    return e.replace(final, meta=e.meta + " [preprocessed]" if e.meta else "preprocessed")
