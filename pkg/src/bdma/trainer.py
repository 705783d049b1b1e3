"""Mini-batch Adam training with learning-rate decay/shrink and savepointing."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .dictionary import IndexedPairs
from .embeddings import EmbeddingSet
from .errors import NumericError
from .losses import LossKind, objective
from .mapper import DEFAULT_HIDDEN, KINDS, SHARING, Mapper, init_mapper
from .retrieval import csls_retrieve

logger = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    batch_size: int = 128
    learning_rate: float = 0.0005
    lr_decay: float = 0.98
    lr_shrink: float = 0.5
    map_beta: float = 0.001
    ortho: bool = True
    max_vocab: int = 200_000
    epochs: int = 50
    loss: str = "cos+rcsls"
    rcsls_k: int = 10
    rcsls_pool: str = "train"
    arch: str = "linear"
    hidden: int = DEFAULT_HIDDEN
    sharing: str = "shared"
    eval_k: int = 10
    shrink_on: str = "decrease"
    seed: int = 0
    direction: tuple[str, str] = ("src", "tgt")

    def __post_init__(self) -> None:
        self.loss = LossKind(self.loss).value
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("lr_decay", "lr_shrink"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.map_beta < 0:
            raise ValueError("map_beta must be non-negative")
        if self.epochs < 1 or self.max_vocab < 1 or self.rcsls_k < 1 or self.eval_k < 1:
            raise ValueError("epochs, max_vocab, rcsls_k and eval_k must be positive")
        if self.arch not in KINDS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.sharing not in SHARING:
            raise ValueError(f"unknown sharing {self.sharing!r}")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.shrink_on not in ("decrease", "plateau"):
            raise ValueError(f"unknown shrink_on {self.shrink_on!r}")
        if self.rcsls_pool not in ("train", "full"):
            raise ValueError(f"unknown rcsls_pool {self.rcsls_pool!r}")
        self.direction = tuple(self.direction)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` and ``state`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def shuffle_epoch(n: int, seed: int, epoch: int) -> np.ndarray:
    """Permutation of ``range(n)`` from a counter-based generator keyed on ``(seed, epoch)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    key = np.array([seed % 2**64, epoch % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).permutation(n)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_p1: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_time: float = 0.0

    @property
    def best_p1(self) -> float:
        return self.val_p1[self.best_epoch]

    def records(self) -> list[dict]:
        """Per-epoch records without timing, so identical runs serialize identically."""
        return [{"epoch": e, "loss": l, "val_p1": p, "lr": r}
                for e, (l, p, r) in enumerate(zip(self.losses, self.val_p1, self.lrs))]

    def to_dict(self) -> dict:
        return asdict(self)


def validation_p1(m: Mapper, src: EmbeddingSet, tgt: EmbeddingSet,
                  groups: Mapping[int, frozenset[int]], k: int = 10) -> float:
    """Forward CSLS P@1 restricted to the validation target words.

    The candidate set is the union of valid targets and the source pool is the
    mapped validation queries; ``k`` is clamped to the pool sizes.
    """
    qidx = np.array(sorted(groups), dtype=np.int64)
    pool = np.array(sorted(set().union(*groups.values())), dtype=np.int64)
    mapped = m.forward(src.matrix[qidx])
    kk = min(k, len(pool), len(qidx))
    top1 = csls_retrieve(mapped, tgt.matrix[pool], mapped, kk, topk=1)[:, 0]
    return float(np.mean([int(pool[j]) in groups[q] for q, j in zip(qidx, top1)]))


def train(src: EmbeddingSet, tgt: EmbeddingSet, train_pairs: IndexedPairs,
          val_groups: Mapping[int, frozenset[int]], cfg: TrainingConfig,
          mapper: Mapper | None = None) -> tuple[Mapper, TrainReport]:
    """Train a mapper and return the snapshot with the best validation forward P@1.

    After each epoch the learning rate is multiplied by ``lr_decay``, and also
    by ``lr_shrink`` when validation P@1 falls below the best so far
    (``shrink_on="decrease"``) or merely fails to exceed it (``"plateau"``).
    Savepoint ties keep the latest epoch.
    """
    if len(train_pairs) == 0:
        raise ValueError("no training pairs")
    if not val_groups:
        raise ValueError("no validation queries")
    if src.dim != tgt.dim:
        raise ValueError(f"source dim {src.dim} != target dim {tgt.dim}")
    t0 = time.perf_counter()
    kind = LossKind(cfg.loss)
    m = mapper.copy() if mapper is not None else init_mapper(
        cfg.arch, src.dim, cfg.hidden, cfg.sharing, cfg.seed)
    Xs_all = src.matrix[train_pairs.src]
    Xt_all = tgt.matrix[train_pairs.tgt]
    pools = None
    if kind.uses_rcsls:
        pools = (Xs_all, Xt_all) if cfg.rcsls_pool == "train" else (src.matrix, tgt.matrix)
    k = min(cfg.rcsls_k, len(Xs_all)) if pools is not None else cfg.rcsls_k
    if pools is not None:
        k = min(k, len(pools[0]), len(pools[1]))

    state = AdamState.zeros_like(m.params)
    report = TrainReport()
    best = None
    lr = cfg.learning_rate
    n = len(train_pairs)
    for epoch in range(cfg.epochs):
        order = shuffle_epoch(n, cfg.seed, epoch)
        batch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                out = objective(m, Xs_all[idx], Xt_all[idx], kind, cfg.map_beta, cfg.ortho, pools, k)
                adam_step(m.params, out.grads, state, lr)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            batch_losses.append(out.total)
        loss = float(np.mean(batch_losses))
        p1 = validation_p1(m, src, tgt, val_groups, cfg.eval_k)
        report.losses.append(loss)
        report.val_p1.append(p1)
        report.lrs.append(lr)
        best_p1 = report.val_p1[report.best_epoch] if best is not None else -1.0
        if p1 >= best_p1:
            best = m.copy()
            report.best_epoch = epoch
        logger.info("epoch %d  loss %.6f  val P@1 %.4f  lr %.3g%s",
                    epoch, loss, p1, lr, "  *" if p1 >= best_p1 else "")
        lr *= cfg.lr_decay
        if p1 < best_p1 or (cfg.shrink_on == "plateau" and p1 == best_p1):
            lr *= cfg.lr_shrink
    report.wall_time = time.perf_counter() - t0
    return best, report
