"""Seeded synthetic bilingual data with a known ground-truth transform."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dictionary import BilingualDictionary, save_dictionary
from .embeddings import EmbeddingSet, preprocess, save_vec

TRANSFORMS = ("identity", "orthogonal", "general-linear", "nonlinear")


@dataclass(frozen=True)
class SynthSpec:
    n: int = 2000
    d: int = 50
    noise: float = 0.0
    kind: str = "orthogonal"
    seed: int = 7
    split: tuple[float, float, float] = (0.9, 0.05, 0.05)

    def __post_init__(self) -> None:
        if self.kind not in TRANSFORMS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.d < 1 or self.n < 3:
            raise ValueError("need d >= 1 and n >= 3")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must be three non-negative numbers summing to 1")


@dataclass
class SynthData:
    src: EmbeddingSet
    tgt: EmbeddingSet
    train: BilingualDictionary
    val: BilingualDictionary
    test: BilingualDictionary
    transform: dict[str, np.ndarray]

    def apply_transform(self, X: np.ndarray) -> np.ndarray:
        return _apply(self.transform, X)


def _apply(transform: dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    if "Q" in transform:
        return X @ transform["Q"].T
    if "A" in transform:
        return np.tanh(X @ transform["A"].T) @ transform["B"].T
    return X.copy()


def _transform(spec: SynthSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = spec.d
    if spec.kind == "identity":
        return {}
    if spec.kind == "orthogonal":
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        return {"Q": q * np.sign(np.diag(r))}
    if spec.kind == "general-linear":
        return {"Q": rng.standard_normal((d, d)) / np.sqrt(d)}
    return {"A": rng.standard_normal((d, d)) / np.sqrt(d), "B": rng.standard_normal((d, d)) / np.sqrt(d)}


def generate(spec: SynthSpec) -> SynthData:
    """Build source/target sets where target word i is the transform of source word i.

    The transform (plus noise) is applied to the raw Gaussian source rows and
    both sides are then preprocessed. Preprocessing commutes with orthogonal
    maps, so the orthogonal kind yields ``tgt = src @ Q.T`` up to rounding.
    """
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal((spec.n, spec.d))
    transform = _transform(spec, rng)
    mapped = _apply(transform, raw)
    if spec.noise > 0:
        mapped = mapped + spec.noise * rng.standard_normal(mapped.shape)
    src_words = tuple(f"s{i}" for i in range(spec.n))
    tgt_words = tuple(f"t{i}" for i in range(spec.n))
    src = preprocess(EmbeddingSet(src_words, raw, f"synth:{spec.kind}:src"))
    tgt = preprocess(EmbeddingSet(tgt_words, mapped, f"synth:{spec.kind}:tgt"))

    order = rng.permutation(spec.n)
    n_train = int(round(spec.n * spec.split[0]))
    n_val = int(round(spec.n * spec.split[1]))
    cuts = [order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]]
    dicts = [BilingualDictionary(tuple((f"s{i}", f"t{i}") for i in part), ("src", "tgt")) for part in cuts]
    return SynthData(src, tgt, *dicts, transform)


def write(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"src": out / "src.vec", "tgt": out / "tgt.vec", "train": out / "train.txt",
             "val": out / "val.txt", "test": out / "test.txt"}
    save_vec(data.src, paths["src"])
    save_vec(data.tgt, paths["tgt"])
    for name in ("train", "val", "test"):
        save_dictionary(getattr(data, name), paths[name])
    return paths
