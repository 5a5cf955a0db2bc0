"""Trainable linear encoder over hashed character n-grams."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from ..errors import (
    ChecksumMismatch,
    ConfigInvalid,
    EmptyTripletSet,
    IoFailure,
    NonFiniteLoss,
    NotEmbeddable,
    VersionMismatch,
)
from ..tripletgen import Triplet
from .features import SparseFeatures, feature_matrix, featurize
from .losses import matryoshka_loss

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"OAE1"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 256
    matryoshka_dims: tuple[int, ...] = (64, 128, 256)
    matryoshka_weights: tuple[float, ...] | None = None
    scale: float = 20.0
    hash_buckets: int = 2**18
    ngram_range: tuple[int, int] = (3, 5)
    batch_size: int = 64
    epochs: int = 5
    learning_rate: float = 0.05
    init_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "matryoshka_dims", tuple(int(d) for d in self.matryoshka_dims))
        object.__setattr__(self, "ngram_range", tuple(int(n) for n in self.ngram_range))
        if self.matryoshka_weights is not None:
            object.__setattr__(self, "matryoshka_weights", tuple(float(w) for w in self.matryoshka_weights))
        if self.dim < 1 or self.dim > 1024:
            raise ConfigInvalid("dim", "must be within 1..1024")
        dims = self.matryoshka_dims
        if not dims or list(dims) != sorted(set(dims)) or dims[0] < 1 or dims[-1] > self.dim:
            raise ConfigInvalid("matryoshka_dims", "must be sorted, unique and <= dim")
        if self.matryoshka_weights is not None and len(self.matryoshka_weights) != len(dims):
            raise ConfigInvalid("matryoshka_weights", "needs one weight per dimension")
        if not self.scale > 0:
            raise ConfigInvalid("scale", "must be > 0")
        if self.hash_buckets < 2 or self.hash_buckets & (self.hash_buckets - 1):
            raise ConfigInvalid("hash_buckets", "must be a power of two")
        lo, hi = self.ngram_range
        if not 1 <= lo <= hi:
            raise ConfigInvalid("ngram_range", "must satisfy 1 <= min <= max")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size", "must be >= 1")
        if self.epochs < 0:
            raise ConfigInvalid("epochs", "must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigInvalid("learning_rate", "must be > 0")

    @property
    def weights(self) -> tuple[float, ...]:
        return self.matryoshka_weights or tuple(1.0 for _ in self.matryoshka_dims)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "EncoderConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown encoder setting")
        return cls(**data)

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainingLog:
    epoch_losses: list[float] = field(default_factory=list)


class HashedNgramEncoder:
    """Linear map from hashed n-gram counts to a unit-norm embedding.

    The projection matrix is immutable once training returns, so ``embed``
    can be called concurrently.
    """

    def __init__(self, config: EncoderConfig, weights: np.ndarray | None = None):
        self.config = config
        if weights is None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x0E]))
            weights = rng.standard_normal((config.hash_buckets, config.dim), dtype=np.float32)
            weights *= np.float32(config.init_std)
        if weights.shape != (config.hash_buckets, config.dim):
            raise ValueError(f"weights shape {weights.shape} does not match config")
        self.weights = np.ascontiguousarray(weights, dtype=np.float32)
        self.training_log = TrainingLog()
        self.provenance: dict = {}
        self._checksum: str | None = None

    # provider interface
    def dim(self) -> int:
        return self.config.dim

    def id(self) -> str:
        return f"hashed-ngram:{self.checksum()[:12]}"

    def features(self, text: str) -> SparseFeatures:
        return featurize(text, self.config.hash_buckets, self.config.ngram_range)

    def embed(self, text: str) -> np.ndarray:
        f = self.features(text)
        if len(f) == 0:
            raise NotEmbeddable(f"no features in {text!r}")
        u = f.values.astype(np.float64) @ self.weights[f.indices].astype(np.float64)
        norm = np.linalg.norm(u)
        if norm == 0 or not np.isfinite(norm):
            raise NotEmbeddable(f"degenerate embedding for {text!r}")
        return (u / norm).astype(np.float32)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not len(texts):
            return np.zeros((0, self.dim()), dtype=np.float32)
        return np.vstack([self.embed(t) for t in texts])

    def checksum(self) -> str:
        if self._checksum is None:
            h = hashlib.sha256()
            h.update(json.dumps(self.config.to_json(), sort_keys=True).encode())
            h.update(self.weights.tobytes())
            self._checksum = h.hexdigest()
        return self._checksum

    # persistence
    def save(self, path: str | Path) -> None:
        cfg = json.dumps({"config": self.config.to_json(), "provenance": self.provenance}, sort_keys=True).encode()
        h, d = self.weights.shape
        body = b"".join(
            [
                SNAPSHOT_MAGIC,
                struct.pack("<I", SNAPSHOT_VERSION),
                struct.pack("<I", len(cfg)),
                cfg,
                struct.pack("<II", h, d),
                self.weights.astype("<f4", copy=False).tobytes(),
            ]
        )
        with open(path, "wb") as fh:
            fh.write(body)
            fh.write(hashlib.sha256(body).digest())

    @classmethod
    def load(cls, path: str | Path) -> "HashedNgramEncoder":
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read encoder snapshot {path}: {exc}") from exc
        if blob[:4] != SNAPSHOT_MAGIC:
            raise VersionMismatch(f"{path} is not an encoder snapshot")
        if len(blob) < 44 or hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
            raise ChecksumMismatch(f"encoder snapshot {path} is corrupt or truncated")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != SNAPSHOT_VERSION:
            raise VersionMismatch(f"unsupported encoder snapshot version {version}")
        (clen,) = struct.unpack_from("<I", blob, 8)
        header = json.loads(blob[12 : 12 + clen])
        config = EncoderConfig.from_json(header["config"])
        h, d = struct.unpack_from("<II", blob, 12 + clen)
        off = 20 + clen
        weights = np.frombuffer(blob, dtype="<f4", count=h * d, offset=off).reshape(h, d)
        enc = cls(config, weights.astype(np.float32))
        enc.provenance = header.get("provenance") or {}
        return enc


def _embed_rows(x: sparse.csr_matrix, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cols, inverse = np.unique(x.indices, return_inverse=True)
    xc = sparse.csr_matrix((x.data.astype(np.float64), inverse, x.indptr), shape=(x.shape[0], len(cols)))
    u = xc @ w[cols].astype(np.float64)
    return u, cols, xc


def train_encoder(
    triplets: Sequence[Triplet],
    config: EncoderConfig,
    init: HashedNgramEncoder | None = None,
) -> HashedNgramEncoder:
    """Mini-batch training of the projection matrix on the Matryoshka loss.

    Each batch scores anchors against all in-batch positives plus the
    triplets' negatives as extra columns. Updates use row-wise Adagrad on the
    touched rows only. Deterministic for a given ``config.seed``.
    """
    if not triplets:
        raise EmptyTripletSet("no triplets to train on")
    enc = init or HashedNgramEncoder(config)
    w = enc.weights.copy()
    accum = np.zeros(config.hash_buckets, dtype=np.float64)

    texts: dict[str, int] = {}
    for t in triplets:
        for s in (t.anchor, t.positive, t.negative):
            texts.setdefault(s, len(texts))
    feats = [featurize(s, config.hash_buckets, config.ngram_range) for s in texts]
    x_all = feature_matrix(feats, config.hash_buckets)
    tri_idx = np.array([[texts[t.anchor], texts[t.positive], texts[t.negative]] for t in triplets])

    n = len(triplets)
    bs = config.batch_size
    lr = config.learning_rate
    dims, wts = config.matryoshka_dims, config.weights
    for epoch in range(config.epochs):
        order = np.random.default_rng(np.random.SeedSequence([config.seed, 1, epoch])).permutation(n)
        losses = []
        for start in range(0, n, bs):
            batch = tri_idx[order[start : start + bs]]
            b = len(batch)
            rows = np.concatenate([batch[:, 0], batch[:, 1], batch[:, 2]])
            u, cols, xc = _embed_rows(x_all[rows], w)
            norms = np.linalg.norm(u, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            e = u / norms
            res = matryoshka_loss(e[:b], e[b : 2 * b], e[2 * b :], dims, wts, config.scale)
            if not np.isfinite(res.loss):
                raise NonFiniteLoss(f"loss became {res.loss} at epoch {epoch}, batch starting {start}")
            losses.append(res.loss)
            d_e = np.vstack([res.grad_anchors, res.grad_positives, res.grad_negatives])
            d_u = (d_e - e * np.sum(d_e * e, axis=1, keepdims=True)) / norms
            d_w = xc.T @ d_u
            accum[cols] += np.mean(d_w * d_w, axis=1)
            step = lr * d_w / np.sqrt(accum[cols] + 1e-10)[:, None]
            w[cols] -= step.astype(np.float32)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        enc.training_log.epoch_losses.append(epoch_loss)
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, epoch_loss)
    trained = HashedNgramEncoder(config, w)
    trained.training_log = enc.training_log
    return trained
