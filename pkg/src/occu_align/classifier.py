"""k-NN inference: compose, embed, retrieve, vote."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .annindex import HnswIndex, Neighbor
from .corpus import LEVELS, QualificationGroup, compose_query, parse_kldb_code
from .encoder.provider import EmbeddingProvider
from .errors import EmbeddingFailure, EmptyIndex, EmptyInput, OccuAlignError
from .iscedmap import IscedLevel, sort_levels

ISCED = "isced"


@dataclass(frozen=True)
class Vote:
    winner: Hashable
    tally: int
    tie_broken: bool
    counts: dict


def _label_key(label) -> tuple:
    # ISCED sets vote as atomic labels; order them by their sorted members
    if isinstance(label, (frozenset, set)):
        return tuple(sorted(str(x.value if isinstance(x, IscedLevel) else x) for x in label))
    return (str(label),)


def vote(labels: Iterable[tuple[Hashable, float]]) -> Vote:
    """Plurality vote; ties go to the larger summed similarity, then to the
    smallest label. ``tie_broken`` is set whenever several labels share the
    top count."""
    counts: dict = defaultdict(int)
    sims: dict = defaultdict(list)
    for label, sim in labels:
        counts[label] += 1
        sims[label].append(sim)
    if not counts:
        raise EmptyInput("cannot vote on an empty neighbour list")
    best = max(counts.values())
    tied = [l for l, c in counts.items() if c == best]
    if len(tied) == 1:
        return Vote(tied[0], best, False, dict(counts))
    # fsum makes the tie-break independent of neighbour order
    winner = min(tied, key=lambda l: (-math.fsum(sims[l]), _label_key(l)))
    return Vote(winner, best, True, dict(counts))


@dataclass
class ClassificationResult:
    neighbors: list[Neighbor]
    kldb_by_level: dict[str, str]
    isced: frozenset
    vote_tallies: dict[str, dict[str, int]]
    tie_broken: dict[str, bool]
    derived_from_type: dict[str, str] = field(default_factory=dict)
    query: str = ""

    @property
    def kldb(self) -> str:
        return self.kldb_by_level["type"]

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "kldb": self.kldb,
            "kldb_by_level": dict(self.kldb_by_level),
            "kldb_derived_from_type": dict(self.derived_from_type),
            "isced": [l.value for l in sort_levels(self.isced)],
            "vote_tallies": self.vote_tallies,
            "tie_broken": self.tie_broken,
            "neighbors": [
                {
                    "id": n.id,
                    "key": n.key,
                    "cosine_similarity": n.cosine_similarity,
                    "kldb": n.payload.get("kldb"),
                    "isced": n.payload.get("isced", []),
                    "term": n.payload.get("term"),
                }
                for n in self.neighbors
            ],
        }


def _isced_label(payload: dict) -> frozenset:
    return frozenset(IscedLevel.parse(x) for x in payload.get("isced", []))


def _tally_json(counts: dict) -> dict[str, int]:
    out = {}
    for label, c in sorted(counts.items(), key=lambda kv: _label_key(kv[0])):
        key = ",".join(_label_key(label)) if isinstance(label, frozenset) else str(label)
        out[key] = c
    return out


def vote_neighbors(neighbors: Sequence[Neighbor], query: str = "") -> ClassificationResult:
    if not neighbors:
        raise EmptyIndex("no neighbours retrieved")
    codes = [parse_kldb_code(n.payload["kldb"]) for n in neighbors]
    by_level: dict[str, str] = {}
    tallies: dict[str, dict[str, int]] = {}
    ties: dict[str, bool] = {}
    for level in LEVELS:
        v = vote((c.label(level), n.cosine_similarity) for c, n in zip(codes, neighbors))
        by_level[level] = v.winner
        tallies[level] = _tally_json(v.counts)
        ties[level] = v.tie_broken
    iv = vote((_isced_label(n.payload), n.cosine_similarity) for n in neighbors)
    tallies[ISCED] = _tally_json(iv.counts)
    ties[ISCED] = iv.tie_broken
    type_code = parse_kldb_code(by_level["type"])
    derived = {level: type_code.label(level) for level in LEVELS}
    return ClassificationResult(list(neighbors), by_level, iv.winner, tallies, ties, derived, query)


class Classifier:
    """Bundles an immutable (provider, index) pair; ``classify`` is safe to
    call from many threads."""

    def __init__(self, provider: EmbeddingProvider, index: HnswIndex, k: int = 1, ef_search: int | None = None):
        if len(index) == 0:
            raise EmptyIndex("index is empty")
        self.provider = provider
        self.index = index
        self.k = k
        self.ef_search = ef_search

    def embed_query(self, text: str) -> np.ndarray:
        try:
            v = np.asarray(self.provider.embed(text), dtype=np.float64)
        except OccuAlignError as exc:
            raise EmbeddingFailure(f"could not embed query: {exc}") from exc
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise EmbeddingFailure("query embedding is degenerate")
        return (v / norm).astype(np.float32)

    def classify(
        self,
        title: str,
        qualification: QualificationGroup | str | None = None,
        skills: Sequence[str] = (),
        k: int | None = None,
        managerial: bool = False,
    ) -> ClassificationResult:
        query = compose_query(title, qualification, managerial, skills).text
        return self.classify_text(query, k)

    def classify_text(self, query: str, k: int | None = None) -> ClassificationResult:
        k = k or self.k
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self.embed_query(query)
        neighbors = self.index.search(q, k, self.ef_search)
        return vote_neighbors(neighbors, query)


def classify(
    title: str,
    qualification: QualificationGroup | str | None,
    skills: Sequence[str],
    k: int,
    provider: EmbeddingProvider,
    index: HnswIndex,
) -> ClassificationResult:
    return Classifier(provider, index, k).classify(title, qualification, skills, k)


def catalogue_items(records, provider: EmbeddingProvider, ruleset=None) -> list:
    """Embed catalogue records as index items carrying KldB/ISCED payloads.

    Item ids follow catalogue order; the key is the composed query text.
    """
    from .annindex import IndexedItem
    from .encoder.provider import embed_many
    from .iscedmap import default_ruleset, isced_labels, map_to_isced

    ruleset = ruleset if ruleset is not None else default_ruleset()
    texts = [r.query().text for r in records]
    vecs = embed_many(provider, texts)
    return [
        IndexedItem(
            i,
            t,
            v,
            {"kldb": r.code.raw, "isced": isced_labels(map_to_isced(r, ruleset)), "term": r.term},
        )
        for i, (r, t, v) in enumerate(zip(records, texts, vecs))
    ]
