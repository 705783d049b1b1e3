"""Cycle-consistency objectives and the layerwise orthogonal penalty.

Every loss returns its value together with exact gradients for all mapper
parameters. The forward term compares ``f_a(x)`` with ``y``; the backward
term compares ``f_b(y)`` with ``x``. Gradients are assembled by pushing the
output-space gradient of each term through the mapper's pullbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GradCheckError, NumericError, ShapeError
from .mapper import Mapper
from .retrieval import blocked_topk


class LossKind(str, Enum):
    MSE = "mse"
    COS = "cos"
    RCSLS = "rcsls"
    COS_RCSLS = "cos+rcsls"

    @property
    def uses_rcsls(self) -> bool:
        return self in (LossKind.RCSLS, LossKind.COS_RCSLS)


@dataclass
class LossOutput:
    total: float
    grads: dict[str, np.ndarray]
    terms: dict[str, float] = field(default_factory=dict)

    def __add__(self, other: LossOutput) -> LossOutput:
        grads = {k: v.copy() for k, v in self.grads.items()}
        for k, v in other.grads.items():
            grads[k] = grads[k] + v if k in grads else v.copy()
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return LossOutput(self.total + other.total, grads, terms)


@dataclass(frozen=True)
class Neighborhoods:
    """Frozen RCSLS neighbour rows: ``target[i]`` indexes the target pool, ``source[i]`` the source pool."""

    target: np.ndarray
    source: np.ndarray


def _zeros_like(m: Mapper) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in m.params.items()}


def _accumulate(into: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for k, v in grads.items():
        into[k] += v


def rcsls_neighborhoods(m: Mapper, Xs: np.ndarray, Xt: np.ndarray,
                        pools: tuple[np.ndarray, np.ndarray], k: int) -> Neighborhoods:
    """k nearest pool rows by dot product: target pool for ``f_a(x)``, source pool for ``f_b(y)``."""
    src_pool, tgt_pool = pools
    _, nt = blocked_topk(m.forward(Xs), tgt_pool, k)
    _, ns = blocked_topk(m.reverse(Xt), src_pool, k)
    return Neighborhoods(nt, ns)


def _cosine_term(a: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of ``1 - |cos(a_i, y_i)|`` and its gradient with respect to ``a``."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    ny = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any(na == 0.0) or np.any(ny == 0.0):
        raise NumericError("cosine loss undefined for a zero vector")
    a_hat, y_hat = a / na, y / ny
    c = np.sum(a_hat * y_hat, axis=1, keepdims=True)
    value = float(np.sum(1.0 - np.abs(c)))
    grad = -np.sign(c) * (y_hat - c * a_hat) / na
    return value, grad


def _rcsls_terms(a: np.ndarray, b: np.ndarray, y: np.ndarray, pools, nb: Neighborhoods, k: int):
    """Batch mean of ``-2 a.y + mean_{N^t(a)} a.t_j + mean_{N^s(b)} s_j.b``."""
    src_pool, tgt_pool = pools
    n = a.shape[0]
    t_mean = tgt_pool[nb.target[:, :k]].mean(axis=1)
    s_mean = src_pool[nb.source[:, :k]].mean(axis=1)
    value = (-2.0 * np.sum(a * y) + np.sum(a * t_mean) + np.sum(s_mean * b)) / n
    return float(value), (-2.0 * y + t_mean) / n, s_mean / n


def ccl(m: Mapper, Xs: np.ndarray, Xt: np.ndarray, kind: LossKind | str = LossKind.MSE,
        pools: tuple[np.ndarray, np.ndarray] | None = None, k: int = 10,
        neighborhoods: Neighborhoods | None = None) -> LossOutput:
    """Cycle-consistency loss of ``m`` on aligned rows ``Xs[i] <-> Xt[i]``.

    MSE and cosine terms are summed over the batch; the RCSLS term is averaged.
    RCSLS kinds need ``pools = (source_pool, target_pool)``; neighbourhoods are
    computed from the current parameters unless given, and are treated as
    constants for differentiation.
    """
    kind = LossKind(kind)
    Xs = np.asarray(Xs, dtype=np.float64)
    Xt = np.asarray(Xt, dtype=np.float64)
    if Xs.shape != Xt.shape or Xs.ndim != 2:
        raise ShapeError(f"source batch {Xs.shape} and target batch {Xt.shape} must match")
    if Xs.shape[0] == 0:
        raise ShapeError("empty batch")
    a, pull_a = m.forward_vjp(Xs)
    b, pull_b = m.reverse_vjp(Xt)
    grad_a = np.zeros_like(a)
    grad_b = np.zeros_like(b)
    terms: dict[str, float] = {}

    if kind is LossKind.MSE:
        ra, rb = a - Xt, b - Xs
        terms["mse"] = float(np.sum(ra * ra) + np.sum(rb * rb))
        grad_a += 2.0 * ra
        grad_b += 2.0 * rb
    if kind in (LossKind.COS, LossKind.COS_RCSLS):
        va, ga = _cosine_term(a, Xt)
        vb, gb = _cosine_term(b, Xs)
        terms["cos"] = va + vb
        grad_a += ga
        grad_b += gb
    if kind.uses_rcsls:
        if pools is None:
            raise ValueError("RCSLS losses need candidate pools (source_pool, target_pool)")
        if k < 1 or k > len(pools[0]) or k > len(pools[1]):
            raise ValueError(f"invalid RCSLS k={k} for pools of size {len(pools[0])}, {len(pools[1])}")
        nb = neighborhoods or rcsls_neighborhoods(m, Xs, Xt, pools, k)
        v, ga, gb = _rcsls_terms(a, b, Xt, pools, nb, k)
        terms["rcsls"] = v
        grad_a += ga
        grad_b += gb

    total = float(sum(terms.values()))
    if not np.isfinite(total):
        raise NumericError(f"non-finite {kind.value} loss")
    grads = _zeros_like(m)
    _accumulate(grads, pull_a(grad_a))
    _accumulate(grads, pull_b(grad_b))
    return LossOutput(total, grads, {"ccl": total, **terms})


def orthogonal_penalty(m: Mapper, map_beta: float = 0.001) -> LossOutput:
    """``map_beta * sum_j ||G_j - I||_F^2`` with ``G_j`` the smaller Gram matrix of layer ``j``."""
    total = 0.0
    grads = {}
    for name, w in m.params.items():
        a, b = w.shape
        if a <= b:
            R = w @ w.T - np.eye(a)
            g = 4.0 * R @ w
        else:
            R = w.T @ w - np.eye(b)
            g = 4.0 * w @ R
        total += float(np.sum(R * R))
        grads[name] = map_beta * g
    return LossOutput(map_beta * total, grads, {"ortho": map_beta * total})


def objective(m: Mapper, Xs: np.ndarray, Xt: np.ndarray, kind: LossKind | str, map_beta: float = 0.001,
              ortho: bool = True, pools=None, k: int = 10,
              neighborhoods: Neighborhoods | None = None) -> LossOutput:
    out = ccl(m, Xs, Xt, kind, pools=pools, k=k, neighborhoods=neighborhoods)
    if ortho:
        out = out + orthogonal_penalty(m, map_beta)
    return out


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    offending: dict[str, list[tuple[int, ...]]]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())

    @property
    def passed(self) -> bool:
        return not any(self.offending.values())


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Elementwise ``|a - n|`` over the tensor's gradient scale ``max(|a|_inf, |n|_inf)``."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / scale


def numerical_gradient(loss_fn, m: Mapper, eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn(mapper)`` for every scalar parameter."""
    out = {}
    for name, p in m.params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss_fn(m)
            p[idx] = old - eps
            down = loss_fn(m)
            p[idx] = old
            g[idx] = (up - down) / (2.0 * eps)
        out[name] = g
    return out


def grad_check(m: Mapper, Xs: np.ndarray, Xt: np.ndarray, kind: LossKind | str = LossKind.MSE,
               eps: float = 1e-5, tolerance: float = 1e-6, map_beta: float = 0.001, ortho: bool = True,
               pools=None, k: int = 10, analytic: dict[str, np.ndarray] | None = None,
               raise_on_fail: bool = False) -> GradCheckReport:
    """Compare analytic gradients of the full objective against central differences.

    RCSLS neighbourhoods are fixed at the unperturbed parameters. ``analytic``
    overrides the gradients under test (used for fault injection).
    """
    kind = LossKind(kind)
    m = m.copy()
    nb = rcsls_neighborhoods(m, Xs, Xt, pools, k) if kind.uses_rcsls else None

    def loss_fn(mm: Mapper) -> float:
        return objective(mm, Xs, Xt, kind, map_beta, ortho, pools, k, nb).total

    if analytic is None:
        analytic = objective(m, Xs, Xt, kind, map_beta, ortho, pools, k, nb).grads
    numeric = numerical_gradient(loss_fn, m, eps)
    errors, offending = {}, {}
    for name in m.params:
        rel = relative_error(analytic[name], numeric[name])
        errors[name] = float(rel.max())
        offending[name] = [tuple(int(i) for i in ix) for ix in np.argwhere(rel >= tolerance)]
    report = GradCheckReport(errors, offending, tolerance)
    if raise_on_fail and not report.passed:
        raise GradCheckError(f"gradient check failed (max relative error {report.worst:.3e})",
                             report.offending)
    return report
