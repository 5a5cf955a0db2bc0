"""TF-IDF over hashed character n-grams, used by the baselines."""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np
from scipy import sparse

from ..errors import EmptyCorpus, NotEmbeddable
from .features import feature_matrix, featurize


class TfidfProvider:
    """Smooth-idf weighted n-gram counts, L2 normalized.

    ``idf = ln((1 + N) / (1 + df)) + 1``; features never seen in the corpus
    get ``df = 0``.
    """

    def __init__(self, idf: np.ndarray, n_docs: int, hash_buckets: int, ngram_range: tuple[int, int]):
        self.idf = idf
        self.n_docs = n_docs
        self.hash_buckets = hash_buckets
        self.ngram_range = tuple(ngram_range)

    def dim(self) -> int:
        return self.hash_buckets

    def id(self) -> str:
        digest = hashlib.sha256(self.idf.tobytes()).hexdigest()[:12]
        return f"tfidf:{self.ngram_range[0]}-{self.ngram_range[1]}:{digest}"

    def transform(self, texts: Sequence[str]) -> sparse.csr_matrix:
        feats = [featurize(t, self.hash_buckets, self.ngram_range) for t in texts]
        x = feature_matrix(feats, self.hash_buckets).astype(np.float64)
        x = x.multiply(self.idf[None, :]).tocsr()
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        return sparse.diags(1.0 / norms) @ x

    def embed_sparse(self, text: str) -> sparse.csr_matrix:
        x = self.transform([text])
        if x.nnz == 0:
            raise NotEmbeddable(f"no n-gram features in {text!r}")
        return x

    def embed(self, text: str) -> np.ndarray:
        return self.embed_sparse(text).toarray().ravel().astype(np.float32)


def tfidf_provider(
    corpus: Sequence[str],
    hash_buckets: int = 2**18,
    ngram_range: tuple[int, int] = (3, 5),
) -> TfidfProvider:
    if not corpus:
        raise EmptyCorpus("TF-IDF needs at least one document")
    feats = [featurize(t, hash_buckets, ngram_range) for t in corpus]
    df = np.zeros(hash_buckets, dtype=np.float64)
    for f in feats:
        df[f.indices] += 1.0
    n = len(corpus)
    idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    return TfidfProvider(idf, n, hash_buckets, ngram_range)


def sparse_topk(queries: sparse.csr_matrix, items: sparse.csr_matrix, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k by cosine for L2-normalized sparse rows.

    Returns ``(ids, sims)`` of shape ``(n_queries, min(k, n_items))``; ties
    go to the lower item id.
    """
    k = min(k, items.shape[0])
    sims = (queries @ items.T).toarray()
    ids = np.empty((sims.shape[0], k), dtype=np.int64)
    out = np.empty((sims.shape[0], k))
    order_ids = np.arange(items.shape[0])
    for r in range(sims.shape[0]):
        order = np.lexsort((order_ids, -sims[r]))[:k]
        ids[r] = order
        out[r] = sims[r, order]
    return ids, out
