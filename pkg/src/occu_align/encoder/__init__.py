from .features import SparseFeatures, feature_matrix, featurize
from .hashed import EncoderConfig, HashedNgramEncoder, train_encoder
from .linear import LinearBaseline, linear_baseline_train
from .losses import LossResult, matryoshka_loss, mnr_loss
from .provider import EmbeddingProvider, TruncatedProvider, embed_many, normalize_rows
from .tfidf import TfidfProvider, sparse_topk, tfidf_provider
from .vectors import PrecomputedProvider, load_precomputed, read_vectors, write_vectors

__all__ = [
    "EmbeddingProvider",
    "EncoderConfig",
    "HashedNgramEncoder",
    "LinearBaseline",
    "LossResult",
    "PrecomputedProvider",
    "SparseFeatures",
    "TfidfProvider",
    "TruncatedProvider",
    "embed_many",
    "feature_matrix",
    "featurize",
    "linear_baseline_train",
    "load_precomputed",
    "matryoshka_loss",
    "mnr_loss",
    "normalize_rows",
    "read_vectors",
    "sparse_topk",
    "tfidf_provider",
    "train_encoder",
    "write_vectors",
]
