"""Anchor/positive/negative triplets keyed on KldB code prefixes."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import OccupationRecord
from .errors import InsufficientKeys, IoFailure, MalformedRecord
from . import provenance

log = logging.getLogger(__name__)


class TripletScheme(str, enum.Enum):
    Subgroup4Digit = "subgroup"
    RequirementDigit = "requirement"

    def key(self, record: OccupationRecord) -> str:
        if self is TripletScheme.Subgroup4Digit:
            return record.code.subgroup
        return str(record.code.requirement_level)


@dataclass(frozen=True)
class Triplet:
    anchor: str
    positive: str
    negative: str
    scheme: TripletScheme
    anchor_key: str

    def identity(self) -> tuple[str, str, str]:
        return (self.anchor, self.positive, self.negative)

    def to_json(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d


@dataclass
class TripletStats:
    emitted: int = 0
    skipped_anchors: int = 0
    short_anchors: int = 0


def _anchor_rng(seed: int, anchor_index: int) -> np.random.Generator:
    # per-anchor substream: output independent of processing order
    return np.random.default_rng(np.random.SeedSequence([seed, anchor_index]))


def build_triplets(
    records: Sequence[OccupationRecord],
    scheme: TripletScheme,
    per_anchor: int = 3,
    seed: int = 0,
    stats: TripletStats | None = None,
) -> list[Triplet]:
    """Pair the i-th sampled positive with the i-th sampled negative for each
    anchor, sampling uniformly without replacement.

    Anchors whose key bucket has no other member are skipped. Positives are
    drawn from the anchor's bucket (excluding records whose composed text
    equals the anchor's), negatives uniformly from all records outside it.
    """
    if per_anchor < 1:
        raise ValueError("per_anchor must be >= 1")
    scheme = TripletScheme(scheme)
    stats = stats if stats is not None else TripletStats()
    texts = [r.query().text for r in records]
    keys = [scheme.key(r) for r in records]
    buckets: dict[str, list[int]] = {}
    for i, k in enumerate(keys):
        buckets.setdefault(k, []).append(i)
    if len(buckets) < 2:
        raise InsufficientKeys(f"need at least 2 distinct {scheme.value} keys, found {len(buckets)}")

    n = len(records)
    key_arr = np.array(keys, dtype=object)
    complements: dict[str, np.ndarray] = {}
    out: list[Triplet] = []
    for i in range(n):
        k = keys[i]
        pos_pool = [j for j in buckets[k] if j != i and texts[j] != texts[i]]
        if not pos_pool:
            stats.skipped_anchors += 1
            continue
        if k not in complements:
            complements[k] = np.flatnonzero(key_arr != k)
        neg_pool = complements[k]
        rng = _anchor_rng(seed, i)
        m = min(per_anchor, len(pos_pool), len(neg_pool))
        if m < per_anchor:
            stats.short_anchors += 1
        pos = rng.choice(len(pos_pool), size=m, replace=False)
        neg = rng.choice(len(neg_pool), size=m, replace=False)
        for p, q in zip(pos, neg):
            out.append(Triplet(texts[i], texts[pos_pool[p]], texts[neg_pool[q]], scheme, k))
    stats.emitted += len(out)
    log.info(
        "scheme=%s triplets=%d skipped_anchors=%d", scheme.value, len(out), stats.skipped_anchors
    )
    return out


def dedup_and_merge(sets: Iterable[Iterable[Triplet]]) -> list[Triplet]:
    seen: set[tuple[str, str, str]] = set()
    out = []
    for triplets in sets:
        for t in triplets:
            ident = t.identity()
            if ident not in seen:
                seen.add(ident)
                out.append(t)
    return out


def write_triplets(triplets: Iterable[Triplet], path: str | Path, prov: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if prov is not None:
            fh.write(provenance.header_line(prov))
        for t in triplets:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_triplets(path: str | Path) -> list[Triplet]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read triplets {path}: {exc}") from exc
    out = []
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if provenance.is_header(d):
                    continue
                out.append(
                    Triplet(d["anchor"], d["positive"], d["negative"], TripletScheme(d["scheme"]), d["anchor_key"])
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedRecord(f"{path}:{lineno}: bad triplet ({exc})") from None
    return out
