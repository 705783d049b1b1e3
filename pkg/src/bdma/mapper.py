"""Invertible mapping with a forward flow and a transpose-based reverse flow.

Rows are vectors throughout: a batch ``X`` of shape ``(n, d)`` maps to
``X @ W.T`` under a linear mapper. The FFN mapper is two bias-free layers
``W1`` (h x d) and ``W2`` (d x h) with a tanh between them. In shared mode
the reverse flow runs the same storage backwards, each layer transposed:
``tanh(Y @ W2) @ W1``. In independent mode it runs a second parameter set
(``*_rev``) through the forward formula.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ChecksumError, ModelFormatError, ShapeError

MAGIC = b"BDMA"
FORMAT_VERSION = 1
KINDS = ("linear", "ffn")
SHARING = ("shared", "independent")
DEFAULT_HIDDEN = 4096

Pullback = Callable[[np.ndarray], dict]


@dataclass
class Mapper:
    kind: str
    params: dict[str, np.ndarray]
    sharing: str = "shared"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown mapper kind {self.kind!r}")
        if self.sharing not in SHARING:
            raise ValueError(f"unknown sharing mode {self.sharing!r}")
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        names = set(self.param_names())
        if set(self.params) != names:
            raise ShapeError(f"expected parameters {sorted(names)}, got {sorted(self.params)}")
        d, h = self.dim, self.hidden
        for name, p in self.params.items():
            if p.shape != self._expected_shape(name, d, h):
                raise ShapeError(f"parameter {name} has shape {p.shape}")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"parameter {name} has non-finite entries")

    def param_names(self) -> list[str]:
        base = ["W"] if self.kind == "linear" else ["W1", "W2"]
        if self.sharing == "independent":
            base += [n + "_rev" for n in base]
        return base

    @staticmethod
    def _expected_shape(name: str, d: int, h: int) -> tuple[int, int]:
        name = name.removesuffix("_rev")
        return {"W": (d, d), "W1": (h, d), "W2": (d, h)}[name]

    @property
    def dim(self) -> int:
        return self.params["W" if self.kind == "linear" else "W1"].shape[1]

    @property
    def hidden(self) -> int:
        return 0 if self.kind == "linear" else self.params["W1"].shape[0]

    def copy(self) -> Mapper:
        return Mapper(self.kind, {k: v.copy() for k, v in self.params.items()}, self.sharing)

    def transposed(self) -> Mapper:
        """Linear shared mapper whose forward flow is this mapper's reverse flow."""
        if self.kind != "linear" or self.sharing != "shared":
            raise ValueError("transpose duality is defined for shared linear mappers only")
        return Mapper("linear", {"W": self.params["W"].T.copy()})

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ShapeError(f"expected batch with {self.dim} columns, got shape {X.shape}")
        return X

    def forward(self, X: np.ndarray) -> np.ndarray:
        return self.forward_vjp(X)[0]

    def reverse(self, Y: np.ndarray) -> np.ndarray:
        return self.reverse_vjp(Y)[0]

    def forward_vjp(self, X: np.ndarray) -> tuple[np.ndarray, Pullback]:
        """Forward flow plus a pullback mapping d(loss)/d(output) to parameter gradients."""
        X = self._check(X)
        if self.kind == "linear":
            return _linear(X, self.params["W"], "W")
        return _ffn(X, self.params["W1"], self.params["W2"], "W1", "W2")

    def reverse_vjp(self, Y: np.ndarray) -> tuple[np.ndarray, Pullback]:
        Y = self._check(Y)
        p = self.params
        if self.sharing == "independent":
            if self.kind == "linear":
                return _linear(Y, p["W_rev"], "W_rev")
            return _ffn(Y, p["W1_rev"], p["W2_rev"], "W1_rev", "W2_rev")
        if self.kind == "linear":
            W = p["W"]
            return Y @ W, lambda G: {"W": Y.T @ G}
        W1, W2 = p["W1"], p["W2"]
        Z = np.tanh(Y @ W2)

        def pullback(G: np.ndarray) -> dict:
            GH = (G @ W1.T) * (1.0 - Z * Z)
            return {"W1": Z.T @ G, "W2": Y.T @ GH}

        return Z @ W1, pullback


def _linear(X: np.ndarray, W: np.ndarray, name: str) -> tuple[np.ndarray, Pullback]:
    return X @ W.T, lambda G: {name: G.T @ X}


def _ffn(X: np.ndarray, W1: np.ndarray, W2: np.ndarray, n1: str, n2: str) -> tuple[np.ndarray, Pullback]:
    Z = np.tanh(X @ W1.T)

    def pullback(G: np.ndarray) -> dict:
        GH = (G @ W2) * (1.0 - Z * Z)
        return {n2: G.T @ Z, n1: GH.T @ X}

    return Z @ W2.T, pullback


def forward(m: Mapper, X: np.ndarray) -> np.ndarray:
    return m.forward(X)


def reverse(m: Mapper, Y: np.ndarray) -> np.ndarray:
    return m.reverse(Y)


def init_mapper(kind: str, d: int, h: int = DEFAULT_HIDDEN, sharing: str = "shared",
                seed: int = 0) -> Mapper:
    """Linear mappers start at the identity; FFN layers are Glorot-uniform from ``seed``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    if kind == "linear":
        params = {"W": np.eye(d)}
        if sharing == "independent":
            params["W_rev"] = np.eye(d)
        return Mapper(kind, params, sharing)
    if kind != "ffn":
        raise ValueError(f"unknown mapper kind {kind!r}")
    if h < 1:
        raise ValueError("hidden size must be positive")
    rng = np.random.default_rng(seed)
    a = np.sqrt(6.0 / (d + h))
    params = {"W1": rng.uniform(-a, a, (h, d)), "W2": rng.uniform(-a, a, (d, h))}
    if sharing == "independent":
        params["W1_rev"] = rng.uniform(-a, a, (h, d))
        params["W2_rev"] = rng.uniform(-a, a, (d, h))
    return Mapper(kind, params, sharing)


# magic, version, kind, sharing, d, h
_HEADER = struct.Struct("<4sBBBII")


def to_bytes(m: Mapper) -> bytes:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, KINDS.index(m.kind), SHARING.index(m.sharing),
                          m.dim, m.hidden)
    body = b"".join(np.ascontiguousarray(m.params[n], dtype="<f8").tobytes()
                    for n in m.param_names())
    payload = header + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def from_bytes(data: bytes) -> Mapper:
    if len(data) < _HEADER.size + 4 or data[:4] != MAGIC:
        raise ModelFormatError("not a BDMA model file (bad magic or header)")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError("model file checksum mismatch (corrupt or truncated)")
    _, version, kind_b, sharing_b, d, h = _HEADER.unpack_from(payload)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    if kind_b >= len(KINDS) or sharing_b >= len(SHARING):
        raise ModelFormatError("corrupt header: unknown kind or sharing byte")
    kind, sharing = KINDS[kind_b], SHARING[sharing_b]
    if d < 1 or (kind == "ffn" and h < 1):
        raise ModelFormatError("corrupt header: invalid dimensions")
    names = ["W"] if kind == "linear" else ["W1", "W2"]
    if sharing == "independent":
        names += [n + "_rev" for n in names]
    shapes = [Mapper._expected_shape(n, d, h) for n in names]
    expected = _HEADER.size + 8 * sum(a * b for a, b in shapes)
    if len(payload) != expected:
        raise ModelFormatError(f"payload is {len(payload)} bytes, expected {expected} for d={d}, h={h}")
    params, offset = {}, _HEADER.size
    for name, shape in zip(names, shapes):
        count = shape[0] * shape[1]
        params[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    return Mapper(kind, params, sharing)


def save(m: Mapper, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(m))


def load(path: str | Path) -> Mapper:
    return from_bytes(Path(path).read_bytes())
