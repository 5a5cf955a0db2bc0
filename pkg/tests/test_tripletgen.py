import itertools
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from occu_align.errors import InsufficientKeys
from occu_align.tripletgen import (
    Triplet,
    TripletScheme,
    TripletStats,
    build_triplets,
    dedup_and_merge,
    read_triplets,
    write_triplets,
)

from conftest import rec

SUB, REQ = TripletScheme.Subgroup4Digit, TripletScheme.RequirementDigit


def test_three_record_instance():
    a, b, c = rec("A", "32251"), rec("B", "32252"), rec("C", "83181")
    out = build_triplets([a, b, c], SUB, per_anchor=1, seed=0)
    by_anchor = {t.anchor: t for t in out}
    # exhaustive enumeration: A's only same-subgroup partner is B, only outsider is C
    assert by_anchor[a.query().text].positive == b.query().text
    assert by_anchor[a.query().text].negative == c.query().text
    assert by_anchor[b.query().text].positive == a.query().text
    assert c.query().text not in by_anchor  # singleton bucket: skipped


def test_single_bucket():
    with pytest.raises(InsufficientKeys):
        build_triplets([rec("A", "32251"), rec("B", "32252")], SUB)


def test_positives_exhausted():
    rs = [rec("A", "32251"), rec("B", "32252")] + [rec(f"N{i}", "83181") for i in range(5)]
    stats = TripletStats()
    out = build_triplets(rs, SUB, per_anchor=3, seed=1, stats=stats)
    assert sum(t.anchor == rs[0].query().text for t in out) == 1
    assert stats.short_anchors >= 2


def test_requirement_scheme_keys():
    rs = [rec("A", "32251"), rec("B", "83181"), rec("C", "32252")]
    out = build_triplets(rs, REQ, per_anchor=1)
    for t in out:
        assert t.anchor_key == "1"
    assert {t.negative for t in out} == {rs[2].query().text}


def _random_catalogue(draw_codes):
    return [rec(f"T{i}", code) for i, code in enumerate(draw_codes)]


codes = st.lists(st.sampled_from(["32251", "32252", "32253", "83181", "83184", "11112", "11913"]), min_size=2,
                 max_size=30)


@given(codes, st.integers(1, 4), st.integers(0, 2**32), st.sampled_from(list(TripletScheme)))
@settings(max_examples=60)
def test_validity(cs, per_anchor, seed, scheme):
    rs = _random_catalogue(cs)
    key = {r.query().text: scheme.key(r) for r in rs}
    if len(set(key.values())) < 2:
        with pytest.raises(InsufficientKeys):
            build_triplets(rs, scheme, per_anchor, seed)
        return
    out = build_triplets(rs, scheme, per_anchor, seed)
    for t in out:
        assert key[t.positive] == key[t.anchor] == t.anchor_key
        assert key[t.negative] != key[t.anchor]
        assert t.anchor != t.positive
    per = Counter(t.anchor for t in out)
    assert max(per.values(), default=0) <= per_anchor
    # no repeated positive or negative for one anchor (sampling without replacement)
    for a in per:
        ts = [t for t in out if t.anchor == a]
        assert len({t.positive for t in ts}) == len(ts) == len({t.negative for t in ts})


def test_volume_sanity():
    rs = [rec(f"T{i}", code) for code in ("32251", "83181", "11112") for i in range(5)]
    assert len(build_triplets(rs, SUB, per_anchor=3)) == len(rs) * 3


def test_determinism(tmp_path):
    rs = [rec(f"T{i}", code) for i, code in enumerate(["32251", "32252", "32253", "83181", "83184", "11112"] * 3)]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_triplets(build_triplets(rs, SUB, 3, 7), p1)
    write_triplets(build_triplets(rs, SUB, 3, 7), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert build_triplets(rs, SUB, 3, 8) != build_triplets(rs, SUB, 3, 7)


def _t(a, p, n, scheme=SUB):
    return Triplet(a, p, n, scheme, "k")


def test_dedup_identical_across_schemes():
    assert len(dedup_and_merge([[_t("a", "p", "n")], [_t("a", "p", "n", REQ)]])) == 1


def test_dedup_disjoint():
    s1 = [_t("a", "p", "n"), _t("b", "p", "n")]
    s2 = [_t("c", "p", "n"), _t("d", "p", "n"), _t("e", "p", "n")]
    assert dedup_and_merge([s1, s2]) == s1 + s2


def test_dedup_scheme_excluded_oracle():
    fixture = [_t(a, p, n, sch) for (a, p, n), sch in zip(
        [("a", "p", "n"), ("a", "p", "n"), ("a", "p", "m"), ("b", "p", "n"), ("b", "p", "n"),
         ("a", "q", "n"), ("a", "p", "n"), ("c", "c2", "x"), ("c", "c2", "x"), ("b", "p", "n")],
        itertools.cycle([SUB, REQ, REQ]))]
    out = dedup_and_merge([fixture[:5], fixture[5:]])
    assert len(out) == len({(t.anchor, t.positive, t.negative) for t in fixture}) == 5
    assert out[0] is fixture[0]  # first occurrence wins


def test_file_round_trip(tmp_path):
    rs = [rec(f"T{i}", code) for i, code in enumerate(["32251", "32252", "83181", "83182"])]
    ts = build_triplets(rs, SUB, 1)
    p = tmp_path / "t.jsonl"
    write_triplets(ts, p, {"format_version": 1, "seed": 0, "config_hash": "x"})
    assert read_triplets(p) == ts
