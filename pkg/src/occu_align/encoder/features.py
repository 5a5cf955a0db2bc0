from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from ..corpus import SEPARATORS

_SPLIT_RE = re.compile("(" + "|".join(re.escape(s) for s in SEPARATORS) + ")")
_ATOM_PREFIX = b"\x00atom:"


@dataclass(frozen=True)
class SparseFeatures:
    indices: np.ndarray  # int64, sorted unique
    values: np.ndarray  # float32 counts

    def __len__(self) -> int:
        return len(self.indices)


def _bucket(data: bytes, mask: int) -> int:
    return zlib.crc32(data) & mask


def featurize(
    text: str,
    hash_buckets: int = 2**18,
    ngram_range: tuple[int, int] = (3, 5),
) -> SparseFeatures:
    """Hashed, lowercased character n-gram counts.

    Separator tokens become single atomic features; n-grams never span
    a separator. Hashing uses CRC-32 so features are stable across processes.
    """
    mask = hash_buckets - 1
    lo, hi = ngram_range
    hashes: list[int] = []
    for part in _SPLIT_RE.split(text):
        if not part:
            continue
        if part in SEPARATORS:
            hashes.append(_bucket(_ATOM_PREFIX + part.encode(), mask))
            continue
        seg = " ".join(part.lower().split())
        n_chars = len(seg)
        for n in range(lo, hi + 1):
            for i in range(n_chars - n + 1):
                hashes.append(_bucket(seg[i : i + n].encode("utf-8"), mask))
    if not hashes:
        return SparseFeatures(np.zeros(0, np.int64), np.zeros(0, np.float32))
    idx, counts = np.unique(np.asarray(hashes, dtype=np.int64), return_counts=True)
    return SparseFeatures(idx, counts.astype(np.float32))


def feature_matrix(feats: Sequence[SparseFeatures], hash_buckets: int) -> sparse.csr_matrix:
    indptr = np.zeros(len(feats) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(f) for f in feats])
    if feats:
        indices = np.concatenate([f.indices for f in feats]) if indptr[-1] else np.zeros(0, np.int64)
        data = np.concatenate([f.values for f in feats]) if indptr[-1] else np.zeros(0, np.float32)
    else:
        indices, data = np.zeros(0, np.int64), np.zeros(0, np.float32)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(feats), hash_buckets))
