"""Multiple-negatives ranking loss and its Matryoshka wrapper, with analytic
gradients (numpy, float64)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimExceedsVector, EmptyBatch, NormViolation

NORM_TOL = 1e-4


@dataclass
class LossResult:
    loss: float
    grad_anchors: np.ndarray
    grad_positives: np.ndarray
    grad_negatives: np.ndarray | None


def _as_batch(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D batch")
    return x


def _check_shapes(a: np.ndarray, p: np.ndarray, n: np.ndarray | None) -> None:
    if a.shape[0] == 0:
        raise EmptyBatch("empty batch")
    if p.shape != a.shape or (n is not None and n.shape != a.shape):
        raise ValueError(
            f"batch shapes differ: anchors {a.shape}, positives {p.shape}"
            + (f", negatives {n.shape}" if n is not None else "")
        )


def _mnr(a: np.ndarray, p: np.ndarray, n: np.ndarray | None, scale: float) -> LossResult:
    # cosine is computed explicitly, so gradients flow through the row
    # normalization and inputs need not be exactly unit length
    b = a.shape[0]
    a_norm = np.linalg.norm(a, axis=1, keepdims=True)
    an = a / a_norm
    cols = p if n is None else np.vstack([p, n])
    c_norm = np.linalg.norm(cols, axis=1, keepdims=True)
    cn = cols / c_norm

    logits = scale * (an @ cn.T)
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    z = ex.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(z[:, 0])
    diag = logits[np.arange(b), np.arange(b)]
    loss = float(np.mean(lse - diag))

    g = ex / z
    g[np.arange(b), np.arange(b)] -= 1.0
    g /= b
    d_an = scale * (g @ cn)
    d_cn = scale * (g.T @ an)
    d_a = (d_an - an * np.sum(d_an * an, axis=1, keepdims=True)) / a_norm
    d_c = (d_cn - cn * np.sum(d_cn * cn, axis=1, keepdims=True)) / c_norm
    return LossResult(loss, d_a, d_c[:b], None if n is None else d_c[b:])


def mnr_loss(anchors, positives, hard_negatives=None, scale: float = 20.0) -> LossResult:
    """In-batch softmax cross-entropy over scaled cosine similarities.

    Row i scores anchor i against every positive in the batch (and every hard
    negative, if given); the matching positive is the target class.
    """
    a = _as_batch(anchors, "anchors")
    p = _as_batch(positives, "positives")
    n = None if hard_negatives is None else _as_batch(hard_negatives, "hard_negatives")
    _check_shapes(a, p, n)
    for name, x in (("anchors", a), ("positives", p), ("hard_negatives", n)):
        if x is None:
            continue
        if not np.all(np.isfinite(x)):
            raise NormViolation(f"{name} contain NaN/Inf")
        err = np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0))
        if err > NORM_TOL:
            raise NormViolation(f"{name} are not unit-norm (max deviation {err:.2e})")
    return _mnr(a, p, n, scale)


def matryoshka_loss(
    anchors,
    positives,
    hard_negatives=None,
    dims: Sequence[int] = (64, 128, 256),
    weights: Sequence[float] | None = None,
    scale: float = 20.0,
) -> LossResult:
    """Weighted sum of MNR losses over renormalized prefixes of each length
    in ``dims``."""
    a = _as_batch(anchors, "anchors")
    p = _as_batch(positives, "positives")
    n = None if hard_negatives is None else _as_batch(hard_negatives, "hard_negatives")
    _check_shapes(a, p, n)
    dim = a.shape[1]
    weights = [1.0] * len(dims) if weights is None else list(weights)
    if len(weights) != len(dims):
        raise ValueError("one weight per Matryoshka dimension required")
    for d in dims:
        if d > dim or d < 1:
            raise DimExceedsVector(f"prefix dim {d} exceeds vector dim {dim}")

    total: float | None = None
    ga = np.zeros_like(a)
    gp = np.zeros_like(p)
    gn = None if n is None else np.zeros_like(n)
    for d, w in zip(dims, weights):
        if w == 0:
            continue
        r = _mnr(a[:, :d], p[:, :d], None if n is None else n[:, :d], scale)
        if total is None:
            # plain assignment keeps the single-term case bit-identical to mnr_loss
            total = w * r.loss if w != 1.0 else r.loss
            ga[:, :d] = w * r.grad_anchors
            gp[:, :d] = w * r.grad_positives
            if gn is not None:
                gn[:, :d] = w * r.grad_negatives
        else:
            total += w * r.loss
            ga[:, :d] += w * r.grad_anchors
            gp[:, :d] += w * r.grad_positives
            if gn is not None:
                gn[:, :d] += w * r.grad_negatives
    return LossResult(0.0 if total is None else total, ga, gp, gn)
