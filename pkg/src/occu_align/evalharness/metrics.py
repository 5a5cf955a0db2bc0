"""Classification and retrieval metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

from ..corpus import level_label
from ..errors import EmptyQuerySet, LengthMismatch


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class LevelMetrics:
    macro_f1: float
    macro_precision: float
    macro_recall: float
    accuracy: float
    per_class: dict[Hashable, ClassMetrics]

    def summary(self) -> dict[str, float]:
        return {
            "macro_f1": self.macro_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "accuracy": self.accuracy,
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def macro_f1(predictions: Sequence[Hashable], gold: Sequence[Hashable], level: str | None = None) -> LevelMetrics:
    """Per-class precision/recall/F1 over the union of gold and predicted
    labels (0 when a denominator is empty), averaged without weighting.

    With ``level`` set, both sequences hold KldB codes and are compared at
    that hierarchy level.
    """
    if len(predictions) != len(gold):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if level is not None:
        predictions = [level_label(p, level) for p in predictions]
        gold = [level_label(g, level) for g in gold]
    tp: dict = {}
    fp: dict = {}
    fn: dict = {}
    for p, g in zip(predictions, gold):
        for lab in (p, g):
            tp.setdefault(lab, 0)
            fp.setdefault(lab, 0)
            fn.setdefault(lab, 0)
        if p == g:
            tp[p] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    per_class = {}
    for lab in tp:
        prec = _ratio(tp[lab], tp[lab] + fp[lab])
        rec = _ratio(tp[lab], tp[lab] + fn[lab])
        f1 = _ratio(2 * tp[lab], 2 * tp[lab] + fp[lab] + fn[lab])
        per_class[lab] = ClassMetrics(prec, rec, f1, tp[lab] + fn[lab])
    n_cls = len(per_class)
    # fsum over sorted keys: the mean does not depend on example order
    keys = sorted(per_class, key=str)
    mean = lambda attr: math.fsum(getattr(per_class[k], attr) for k in keys) / n_cls if n_cls else 0.0
    acc = _ratio(sum(tp.values()), len(gold))
    return LevelMetrics(mean("f1"), mean("precision"), mean("recall"), acc, per_class)


def average_precision_at_k(relevance: Sequence[bool | int], k: int) -> float:
    """AP over the first ``k`` ranks, normalised by the number of relevant
    items found there (at least 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    total = 0.0
    for i, rel in enumerate(relevance[:k], start=1):
        if rel:
            hits += 1
            total += hits / i
    return total / max(1, hits)


def map_at_k(ranked_lists: Sequence[Sequence[Hashable]], gold: Sequence[Hashable], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked_lists) != len(gold):
        raise LengthMismatch("one ranked list per gold label required")
    if not ranked_lists:
        raise EmptyQuerySet("mAP over zero queries")
    aps = [average_precision_at_k([lab == g for lab in ranked], k) for ranked, g in zip(ranked_lists, gold)]
    return math.fsum(aps) / len(aps)
