from __future__ import annotations

from typing import Iterable, Protocol, runtime_checkable

import numpy as np

from ..errors import NormViolation

UNIT_TOL = 1e-6


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Anything that turns text into a unit-norm float vector."""

    def embed(self, text: str) -> np.ndarray: ...

    def dim(self) -> int: ...

    def id(self) -> str: ...


def embed_many(provider: EmbeddingProvider, texts: Iterable[str]) -> np.ndarray:
    batch = getattr(provider, "embed_many", None)
    texts = list(texts)
    if batch is not None:
        return batch(texts)
    if not texts:
        return np.zeros((0, provider.dim()), dtype=np.float32)
    return np.vstack([provider.embed(t) for t in texts])


def normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms == 0, 1, norms)


def check_unit(x: np.ndarray, tol: float = UNIT_TOL) -> None:
    if not np.all(np.isfinite(x)):
        raise NormViolation("vector contains NaN or Inf")
    norms = np.linalg.norm(np.atleast_2d(x), axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise NormViolation(f"vector norms deviate from 1 (max error {np.max(np.abs(norms - 1.0)):.2e})")


class TruncatedProvider:
    """Matryoshka view: first ``dim`` components of another provider,
    renormalized."""

    def __init__(self, base: EmbeddingProvider, dim: int):
        if dim < 1 or dim > base.dim():
            raise ValueError(f"prefix dim {dim} outside 1..{base.dim()}")
        self.base = base
        self._dim = dim

    def embed(self, text: str) -> np.ndarray:
        return normalize_rows(self.base.embed(text)[: self._dim].astype(np.float64)).astype(np.float32)

    def embed_many(self, texts: list[str]) -> np.ndarray:
        full = embed_many(self.base, texts)
        return normalize_rows(full[:, : self._dim].astype(np.float64)).astype(np.float32)

    def dim(self) -> int:
        return self._dim

    def id(self) -> str:
        return f"{self.base.id()}@{self._dim}"
