"""Bilingual dictionaries: parsing, polysemy filtering and binding to embedding rows."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .embeddings import EmbeddingSet
from .errors import DictionaryError


@dataclass(frozen=True)
class BilingualDictionary:
    pairs: tuple[tuple[str, str], ...]
    direction: tuple[str, str] = ("src", "tgt")

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple((s, t) for s, t in self.pairs))
        if len(set(self.pairs)) != len(self.pairs):
            raise DictionaryError("dictionary contains duplicated pairs")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def swapped(self) -> BilingualDictionary:
        return BilingualDictionary(tuple((t, s) for s, t in self.pairs),
                                   (self.direction[1], self.direction[0]))

    def to_lines(self) -> str:
        return "".join(f"{s} {t}\n" for s, t in self.pairs)


@dataclass(frozen=True)
class IndexedPairs:
    src: np.ndarray
    tgt: np.ndarray
    src_oov: int = 0
    tgt_oov: int = 0

    def __len__(self) -> int:
        return len(self.src)


def parse_dictionary(stream: IO[str], direction: tuple[str, str] = ("src", "tgt")) -> BilingualDictionary:
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise DictionaryError(f"line {lineno}: expected 2 fields, got {len(fields)}")
        pair = (fields[0], fields[1])
        if pair not in seen:
            seen.add(pair)
            pairs.append(pair)
    return BilingualDictionary(tuple(pairs), direction)


def load_dictionary(path: str | Path, direction: tuple[str, str] = ("src", "tgt")) -> BilingualDictionary:
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        return parse_dictionary(f, direction)


def save_dictionary(d: BilingualDictionary, path: str | Path) -> None:
    Path(path).write_text(d.to_lines(), encoding="utf-8", errors="surrogateescape")


def filter_unique(d: BilingualDictionary) -> BilingualDictionary:
    """Keep only pairs whose source and target words each occur in exactly one pair."""
    src_count = Counter(s for s, _ in d.pairs)
    tgt_count = Counter(t for _, t in d.pairs)
    kept = tuple(p for p in d.pairs if src_count[p[0]] == 1 and tgt_count[p[1]] == 1)
    return BilingualDictionary(kept, d.direction)


def sample_unique(d: BilingualDictionary, cap: int, seed: int | None = None,
                  mode: str = "first") -> BilingualDictionary:
    """Select up to ``cap`` pairs: the first ones in file order, or a seeded random subset."""
    if cap < 0:
        raise ValueError("cap must be non-negative")
    if mode == "first" or cap >= len(d):
        return BilingualDictionary(d.pairs[:cap], d.direction)
    if mode != "random":
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(d), size=cap, replace=False))
    return BilingualDictionary(tuple(d.pairs[i] for i in chosen), d.direction)


def split_tail(d: BilingualDictionary, fraction: float = 0.1) -> tuple[BilingualDictionary, BilingualDictionary]:
    """Split off the last ``fraction`` of pairs (at least one) as a validation dictionary."""
    if len(d) < 2:
        raise DictionaryError("need at least two pairs to split off a validation set")
    n_val = min(len(d) - 1, max(1, int(round(len(d) * fraction))))
    cut = len(d) - n_val
    return (BilingualDictionary(d.pairs[:cut], d.direction),
            BilingualDictionary(d.pairs[cut:], d.direction))


def bind(d: BilingualDictionary, src: EmbeddingSet, tgt: EmbeddingSet) -> IndexedPairs:
    """Map pairs to row indices; a pair is dropped if either token is out of vocabulary.

    A pair missing on both sides counts as a source-OOV drop so that
    ``src_oov + tgt_oov + len(result) == len(d)``.
    """
    s_idx: list[int] = []
    t_idx: list[int] = []
    src_oov = tgt_oov = 0
    for s, t in d.pairs:
        i, j = src.lookup(s), tgt.lookup(t)
        if i is None:
            src_oov += 1
        elif j is None:
            tgt_oov += 1
        else:
            s_idx.append(i)
            t_idx.append(j)
    if not s_idx:
        raise DictionaryError(
            f"all {len(d)} dictionary pairs are out of vocabulary "
            f"(source OOV {src_oov}, target OOV {tgt_oov})")
    return IndexedPairs(np.array(s_idx, dtype=np.int64), np.array(t_idx, dtype=np.int64),
                        src_oov, tgt_oov)


def eval_groups(d: BilingualDictionary, src: EmbeddingSet, tgt: EmbeddingSet) -> dict[int, frozenset[int]]:
    """Group every in-vocabulary translation under its source row index."""
    groups: dict[int, set[int]] = {}
    for s, t in d.pairs:
        i, j = src.lookup(s), tgt.lookup(t)
        if i is None or j is None:
            continue
        groups.setdefault(i, set()).add(j)
    if not groups:
        raise DictionaryError("no evaluation pair survives the vocabulary filter")
    return {i: frozenset(ts) for i, ts in groups.items()}
