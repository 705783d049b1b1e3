"""Nearest-neighbour and CSLS retrieval, Precision@k evaluation and word translation.

Scores are computed block by block (queries x candidates) so the full score
matrix is never materialized; each block contributes its own top-k which is
merged into a running top-k per query. Ties are broken by ascending index.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingSet
from .mapper import Mapper

QUERY_BLOCK = 512
CANDIDATE_BLOCK = 16384


@dataclass(frozen=True)
class RetrievalMethod:
    kind: str = "csls"
    k: int = 10

    def __post_init__(self) -> None:
        if self.kind not in ("nn", "csls"):
            raise ValueError(f"unknown retrieval method {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def __str__(self) -> str:
        return "nn" if self.kind == "nn" else f"csls(k={self.k})"


@dataclass
class EvalReport:
    direction: str
    method: str
    precision: dict[int, float]
    queries: int
    src_oov: int = 0
    tgt_oov: int = 0
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ks = sorted(self.precision)
        vals = [self.precision[k] for k in ks]
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"precision outside [0, 1]: {vals}")
        if not all(a <= b for a, b in zip(vals, vals[1:])):
            raise ValueError(f"P@k must be non-decreasing in k: {vals}")

    def to_json(self, with_time: bool = True) -> dict:
        out = asdict(self)
        out["precision"] = {f"P@{k}": v for k, v in sorted(self.precision.items())}
        if not with_time:
            out.pop("elapsed")
        if not self.extra:
            out.pop("extra")
        return out


def _unit(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms == 0.0, 1.0, norms)


def select_topk(scores: np.ndarray, k: int, index: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` per row of ``scores`` by descending score, ties by ascending index.

    ``index`` gives the candidate id of each column (default ``arange``), either
    1-D shared by all rows or 2-D per row.
    """
    n, m = scores.shape
    if index is None:
        index = np.broadcast_to(np.arange(m), (n, m))
    elif index.ndim == 1:
        index = np.broadcast_to(index, (n, m))
    if k < m:
        # every entry tied with the k-th largest must stay in play for the tie-break
        kth = -np.partition(-scores, k - 1, axis=1)[:, k - 1:k]
        keep = scores >= kth
        width = int(keep.sum(axis=1).max())
        cand = np.argsort(~keep, axis=1, kind="stable")[:, :width]
        sub_s = np.take_along_axis(scores, cand, axis=1)
        sub_i = np.take_along_axis(index, cand, axis=1)
        sub_s = np.where(np.take_along_axis(keep, cand, axis=1), sub_s, -np.inf)
    else:
        sub_s, sub_i = scores, index
    order = np.lexsort((sub_i, -sub_s), axis=1)[:, :k]
    return np.take_along_axis(sub_s, order, axis=1), np.take_along_axis(sub_i, order, axis=1)


def _topk_block(Q: np.ndarray, T: np.ndarray, k: int, scale: float, offset: np.ndarray | None):
    best_s = best_i = None
    for start in range(0, T.shape[0], CANDIDATE_BLOCK):
        Tb = T[start:start + CANDIDATE_BLOCK]
        s = Q @ Tb.T
        if scale != 1.0:
            s *= scale
        if offset is not None:
            s -= offset[start:start + Tb.shape[0]]
        vals, idx = select_topk(s, min(k, Tb.shape[0]), np.arange(start, start + Tb.shape[0]))
        if best_s is None:
            best_s, best_i = vals, idx
        else:
            best_s, best_i = select_topk(np.hstack([best_s, vals]), k, np.hstack([best_i, idx]))
    return best_s, best_i


def blocked_topk(Q: np.ndarray, T: np.ndarray, k: int, scale: float = 1.0,
                 offset: np.ndarray | None = None, threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` of ``scale * Q @ T.T - offset`` per query row, computed blockwise.

    Query blocks are fixed-size regardless of ``threads`` so results do not
    depend on the worker count.
    """
    if k > T.shape[0]:
        raise ValueError(f"k={k} exceeds candidate count {T.shape[0]}")
    starts = range(0, Q.shape[0], QUERY_BLOCK)

    def run(start: int):
        return _topk_block(Q[start:start + QUERY_BLOCK], T, k, scale, offset)

    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    if not parts:
        return np.empty((0, k)), np.empty((0, k), dtype=np.int64)
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def nn_retrieve(Q: np.ndarray, T: np.ndarray, k: int, threads: int | None = None) -> np.ndarray:
    """Indices of the ``k`` most cosine-similar rows of ``T`` for each query."""
    if Q.shape[1] != T.shape[1]:
        raise ValueError(f"dimension mismatch: queries {Q.shape[1]}, targets {T.shape[1]}")
    return blocked_topk(_unit(Q), _unit(T), k, threads=threads)[1]


def mean_topk_cosine(A: np.ndarray, B: np.ndarray, k: int, threads: int | None = None) -> np.ndarray:
    """For each row of ``A``, the mean cosine to its ``k`` nearest rows of ``B``."""
    return blocked_topk(_unit(A), _unit(B), k, threads=threads)[0].mean(axis=1)


def csls_retrieve(Q: np.ndarray, T: np.ndarray, Spool: np.ndarray, k: int,
                  topk: int | None = None, threads: int | None = None) -> np.ndarray:
    """Rank targets by ``2 cos(q, t) - r_T(q) - r_S(t)``.

    ``r_T(q)`` is the mean cosine of ``q`` to its ``k`` nearest targets and
    ``r_S(t)`` the mean cosine of ``t`` to its ``k`` nearest rows of the mapped
    source pool. ``r_T(q)`` is constant per query and so does not affect the
    ranking. Returns ``topk`` (default ``k``) indices per query.
    """
    if Q.shape[1] != T.shape[1] or Spool.shape[1] != T.shape[1]:
        raise ValueError("dimension mismatch between queries, targets and source pool")
    if len(Spool) == 0:
        raise ValueError("source pool is empty")
    if k > T.shape[0] or k > Spool.shape[0]:
        raise ValueError(f"k={k} exceeds |T|={T.shape[0]} or |Spool|={Spool.shape[0]}")
    topk = k if topk is None else topk
    Tn = _unit(T)
    r_src = mean_topk_cosine(Tn, Spool, k, threads=threads)
    return blocked_topk(_unit(Q), Tn, topk, scale=2.0, offset=r_src, threads=threads)[1]


def csls_scores(Q: np.ndarray, T: np.ndarray, Spool: np.ndarray, k: int) -> np.ndarray:
    """Dense CSLS score matrix; only for small inputs."""
    Qn, Tn = _unit(Q), _unit(T)
    return 2.0 * Qn @ Tn.T - mean_topk_cosine(Qn, Tn, k)[:, None] - mean_topk_cosine(Tn, Spool, k)[None, :]


def retrieve(method: RetrievalMethod, Q: np.ndarray, T: np.ndarray, Spool: np.ndarray | None,
             topk: int, threads: int | None = None) -> np.ndarray:
    if method.kind == "nn":
        return nn_retrieve(Q, T, topk, threads=threads)
    return csls_retrieve(Q, T, Spool, method.k, topk=topk, threads=threads)


def _sides(m: Mapper, direction: str, src: EmbeddingSet, tgt: EmbeddingSet):
    if direction in ("forward", "fwd"):
        return m.forward, src, tgt
    if direction in ("reverse", "rev"):
        return m.reverse, tgt, src
    raise ValueError(f"unknown direction {direction!r}")


def precision_at_k(m: Mapper, direction: str, groups: Mapping[int, frozenset[int]],
                   src: EmbeddingSet, tgt: EmbeddingSet, method: RetrievalMethod = RetrievalMethod(),
                   ks: Sequence[int] = (1, 5, 10), threads: int | None = None) -> EvalReport:
    """Precision@k of ``m`` in one direction.

    ``src``/``tgt`` are always the model's source and target languages. For
    ``reverse`` the query side is ``tgt``: ``groups`` must map target-language
    row indices to sets of source-language row indices, and queries go through
    the reverse flow of the same model.
    """
    if not groups:
        raise ValueError("no evaluation queries")
    t0 = time.perf_counter()
    flow, query_side, cand_side = _sides(m, direction, src, tgt)
    qidx = np.array(sorted(groups), dtype=np.int64)
    mapped = flow(query_side.matrix[qidx])
    spool = flow(query_side.matrix) if method.kind == "csls" else None
    kmax = max(ks)
    top = retrieve(method, mapped, cand_side.matrix, spool, kmax, threads=threads)
    hits = np.array([[t in groups[q] for t in row] for q, row in zip(qidx, top)], dtype=bool)
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), kmax)
    precision = {k: float(np.mean(first_hit < k)) for k in sorted(set(ks))}
    label = "forward" if direction in ("forward", "fwd") else "reverse"
    return EvalReport(label, str(method), precision, len(qidx), elapsed=time.perf_counter() - t0)


def translate(m: Mapper, words: Sequence[str], direction: str, src: EmbeddingSet, tgt: EmbeddingSet,
              method: RetrievalMethod = RetrievalMethod(), k: int = 10) -> dict[str, list[str] | None]:
    """Top-``k`` translations per word; out-of-vocabulary words map to ``None``."""
    flow, query_side, cand_side = _sides(m, direction, src, tgt)
    result: dict[str, list[str] | None] = {w: None for w in words}
    known = [w for w in dict.fromkeys(words) if w in query_side]
    if not known:
        return result
    rows = np.array([query_side.lookup(w) for w in known])
    spool = flow(query_side.matrix) if method.kind == "csls" else None
    top = retrieve(method, flow(query_side.matrix[rows]), cand_side.matrix, spool, k)
    for w, row in zip(known, top):
        result[w] = [cand_side.words[j] for j in row]
    return result
