"""Evaluation pipelines, reports and ablations."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from ..annindex import HnswIndex
from ..classifier import Classifier, vote
from ..corpus import LEVELS, OccupationRecord, compose_query, parse_kldb_code
from ..encoder.linear import LinearBaseline
from ..encoder.tfidf import TfidfProvider, sparse_topk, tfidf_provider
from ..errors import EmptyApplicableSet, EmptyQuerySet
from .metrics import LevelMetrics, macro_f1, map_at_k
from .perturb import Perturbation

REPORT_SCHEMA = "occu-align.eval/1"
ABLATION_LEVELS = ("subgroup", "requirement")


def record_query(record: OccupationRecord, title: str | None = None) -> str:
    """Composed query for a test record, optionally with a replaced title."""
    return compose_query(
        title if title is not None else record.term,
        record.qualification,
        record.code.managerial,
        record.skills,
    ).text


class Pipeline(Protocol):
    name: str

    def predict(self, queries: Sequence[str]) -> list[dict[str, str]]:
        """Per-level labels for each query."""

    def retrieve(self, queries: Sequence[str], k: int) -> list[list[str]]:
        """Ranked neighbour KldB codes for each query."""


def _vote_levels(codes: Sequence[str], sims: Sequence[float]) -> dict[str, str]:
    parsed = [parse_kldb_code(c) for c in codes]
    return {lvl: vote((p.label(lvl), s) for p, s in zip(parsed, sims)).winner for lvl in LEVELS}


class KnnPipeline:
    def __init__(self, classifier: Classifier, name: str = "knn", retrieval_ef: int | None = None):
        self.classifier = classifier
        self.name = name
        self.retrieval_ef = retrieval_ef

    def predict(self, queries):
        return [dict(self.classifier.classify_text(q).kldb_by_level) for q in queries]

    def retrieve(self, queries, k):
        out = []
        for q in queries:
            v = self.classifier.embed_query(q)
            out.append([n.payload["kldb"] for n in self.classifier.index.search(v, k, self.retrieval_ef)])
        return out


class TfidfKnnPipeline:
    """Exact cosine k-NN over sparse TF-IDF vectors of the training queries."""

    def __init__(self, train: Sequence[OccupationRecord], k: int = 1, hash_buckets: int = 2**18,
                 ngram_range=(3, 5), name: str = "tfidf-knn"):
        texts = [r.query().text for r in train]
        self.provider: TfidfProvider = tfidf_provider(texts, hash_buckets, ngram_range)
        self.items = self.provider.transform(texts)
        self.codes = [r.code.raw for r in train]
        self.k = k
        self.name = name

    def _topk(self, queries, k):
        return sparse_topk(self.provider.transform(list(queries)), self.items, k)

    def predict(self, queries):
        ids, sims = self._topk(queries, self.k)
        return [_vote_levels([self.codes[i] for i in row], s) for row, s in zip(ids, sims)]

    def retrieve(self, queries, k):
        ids, _ = self._topk(queries, k)
        return [[self.codes[i] for i in row] for row in ids]


class LinearPipeline:
    """One-vs-rest logistic baseline on TF-IDF features, one model per level."""

    def __init__(self, train: Sequence[OccupationRecord], hash_buckets: int = 2**18, ngram_range=(3, 5),
                 name: str = "logreg-tfidf", **kwargs):
        texts = [r.query().text for r in train]
        self.provider = tfidf_provider(texts, hash_buckets, ngram_range)
        x = self.provider.transform(texts)
        self.models = {
            lvl: LinearBaseline(**kwargs).fit(x, [r.code.label(lvl) for r in train]) for lvl in LEVELS
        }
        self.name = name

    def predict(self, queries):
        x = self.provider.transform(list(queries))
        per_level = {lvl: m.predict(x) for lvl, m in self.models.items()}
        return [{lvl: per_level[lvl][i] for lvl in LEVELS} for i in range(len(queries))]

    def retrieve(self, queries, k):
        raise NotImplementedError("the linear baseline does not rank neighbours")


@dataclass
class EvalReport:
    pipeline: str
    per_level: dict[str, dict[str, float]]
    per_class: dict[str, dict[str, dict[str, float]]]
    retrieval: dict[str, dict[str, float]]
    config: dict = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    n_queries: int = 0
    schema: str = REPORT_SCHEMA

    def to_json(self) -> dict:
        return {
            "schema": self.schema,
            "pipeline": self.pipeline,
            "n_queries": self.n_queries,
            "per_level": self.per_level,
            "per_class": self.per_class,
            "retrieval": self.retrieval,
            "config": self.config,
            "timing": self.timing,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(
            pipeline=d["pipeline"],
            per_level=d["per_level"],
            per_class=d["per_class"],
            retrieval=d["retrieval"],
            config=d.get("config", {}),
            timing=d.get("timing", {}),
            n_queries=d.get("n_queries", 0),
            schema=d.get("schema", REPORT_SCHEMA),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False)

    def to_csv(self) -> str:
        """Flat export: one row per (section, level, class, metric)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "level", "class", "metric", "value"])
        for lvl, m in self.per_level.items():
            for name, v in m.items():
                w.writerow(["level", lvl, "", name, repr(v)])
        for lvl, classes in self.per_class.items():
            for cls_, m in classes.items():
                for name, v in m.items():
                    w.writerow(["class", lvl, cls_, name, repr(v)])
        for lvl, m in self.retrieval.items():
            for name, v in m.items():
                w.writerow(["retrieval", lvl, "", name, repr(v)])
        return buf.getvalue()

    def table(self, digits: int = 3) -> str:
        lines = [f"{'level':<12} {'macro_f1':>9} {'accuracy':>9} {'mAP@3':>7} {'mAP@5':>7}"]
        for lvl in self.per_level:
            r = self.retrieval.get(lvl, {})
            fmt = lambda v: "-" if v is None else f"{v:.{digits}f}"
            lines.append(
                f"{lvl:<12} {fmt(self.per_level[lvl]['macro_f1']):>9} {fmt(self.per_level[lvl]['accuracy']):>9} "
                f"{fmt(r.get('map_at_3')):>7} {fmt(r.get('map_at_5')):>7}"
            )
        return "\n".join(lines)


def evaluate(
    pipeline: Pipeline,
    test: Sequence[OccupationRecord],
    levels: Sequence[str] = LEVELS,
    retrieval: bool = True,
    config: dict | None = None,
    query_fn: Callable[[OccupationRecord], str] = record_query,
) -> EvalReport:
    if not test:
        raise EmptyQuerySet("no test records")
    t0 = time.perf_counter()
    queries = [query_fn(r) for r in test]
    preds = pipeline.predict(queries)
    t_pred = time.perf_counter() - t0
    per_level, per_class = {}, {}
    for lvl in levels:
        m = macro_f1([p[lvl] for p in preds], [r.code.label(lvl) for r in test])
        per_level[lvl] = m.summary()
        per_class[lvl] = {
            str(c): {"precision": cm.precision, "recall": cm.recall, "f1": cm.f1, "support": cm.support}
            for c, cm in sorted(m.per_class.items(), key=lambda kv: str(kv[0]))
        }
    ret: dict[str, dict[str, float]] = {}
    t_ret = 0.0
    if retrieval:
        t1 = time.perf_counter()
        ranked = pipeline.retrieve(queries, 5)
        t_ret = time.perf_counter() - t1
        for lvl in levels:
            lists = [[parse_kldb_code(c).label(lvl) for c in row] for row in ranked]
            gold = [r.code.label(lvl) for r in test]
            ret[lvl] = {"map_at_3": map_at_k(lists, gold, 3), "map_at_5": map_at_k(lists, gold, 5)}
    timing = {"predict_s": t_pred, "retrieve_s": t_ret, "per_query_ms": 1000 * t_pred / len(test)}
    return EvalReport(pipeline.name, per_level, per_class, ret, config or {}, timing, len(test))


@dataclass
class AblationResult:
    perturbation: str
    affected: int
    n_examples: int
    original: dict[str, dict[str, float]]
    perturbed: dict[str, dict[str, float]]
    delta_pp: dict[str, dict[str, float]]

    def to_json(self) -> dict:
        return {
            "perturbation": self.perturbation,
            "affected": self.affected,
            "n_examples": self.n_examples,
            "original": self.original,
            "perturbed": self.perturbed,
            "delta_pp": self.delta_pp,
        }


def _acc_f1(m: LevelMetrics) -> dict[str, float]:
    return {"accuracy": m.accuracy, "f1": m.macro_f1}


def run_ablation(
    test_slice: Sequence[OccupationRecord],
    perturbation: Perturbation | str,
    pipeline: Pipeline,
    levels: Sequence[str] = ABLATION_LEVELS,
) -> AblationResult:
    """Compare the pipeline on applicable titles before and after rewriting.

    Titles with several variants (gender) contribute one perturbed example per
    variant, each scored against the record's gold code.
    """
    pert = Perturbation(perturbation)
    applicable: list[tuple[OccupationRecord, list[str]]] = []
    for r in test_slice:
        variants = pert.variants(r.term)
        if variants:
            applicable.append((r, variants))
    if not applicable:
        raise EmptyApplicableSet(f"{pert.value}: no applicable titles")
    originals = [r for r, _ in applicable]
    pert_records = [(r, v) for r, vs in applicable for v in vs]
    orig_pred = pipeline.predict([record_query(r) for r in originals])
    pert_pred = pipeline.predict([record_query(r, v) for r, v in pert_records])
    original, perturbed, delta = {}, {}, {}
    for lvl in levels:
        o = _acc_f1(macro_f1([p[lvl] for p in orig_pred], [r.code.label(lvl) for r in originals]))
        p = _acc_f1(macro_f1([p[lvl] for p in pert_pred], [r.code.label(lvl) for r, _ in pert_records]))
        original[lvl], perturbed[lvl] = o, p
        delta[lvl] = {m: 100.0 * (p[m] - o[m]) for m in o}
    return AblationResult(pert.value, len(applicable), len(pert_records), original, perturbed, delta)
