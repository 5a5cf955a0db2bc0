import numpy as np
import pytest

from occu_align import annindex
from occu_align.annindex import HnswIndex, HnswParams, IndexedItem, exact_search
from occu_align.errors import (
    ChecksumMismatch,
    DimensionMismatch,
    EmptyIndex,
    EmptyInput,
    NormViolation,
    VersionMismatch,
)
from oracles import unit_rows as _unit_rows


def unit_rows(n, d, seed):
    return _unit_rows(np.random.default_rng(seed), n, d).astype(np.float32)


def items_from(vecs):
    return [IndexedItem(i, f"k{i}", v, {"i": i}) for i, v in enumerate(vecs)]


def brute_topk(vecs, q, k):
    sims = vecs.astype(np.float64) @ q.astype(np.float64)
    return set(np.argsort(-sims, kind="stable")[:k].tolist())


@pytest.fixture(scope="module")
def idx1000():
    vecs = unit_rows(1000, 64, seed=11)
    return vecs, annindex.build(items_from(vecs), HnswParams(M=16, ef_construction=200, ef_search=64, seed=0))


@pytest.fixture(scope="module")
def queries():
    return unit_rows(200, 64, seed=99)


def test_single_item_returns_itself():
    v = unit_rows(1, 8, seed=0)[0]
    idx = annindex.build([IndexedItem(7, "only", v, {"x": 1})])
    (hit,) = idx.search(v, k=1)
    assert hit.id == 7 and hit.key == "only" and hit.payload == {"x": 1}
    assert hit.cosine_similarity == pytest.approx(1.0, abs=1e-6)


def test_orthonormal_basis_e1():
    vecs = np.eye(4, dtype=np.float32)
    idx = annindex.build(items_from(vecs))
    res = idx.search(vecs[0], k=4)
    assert res[0].id == 0 and res[0].cosine_similarity == pytest.approx(1.0)
    assert [n.cosine_similarity for n in res[1:]] == pytest.approx([0.0, 0.0, 0.0])
    # ties at 0 break on ascending id
    assert [n.id for n in res[1:]] == [1, 2, 3]


def test_degree_bounds_audit():
    vecs = unit_rows(100, 16, seed=3)
    idx = annindex.build(items_from(vecs), HnswParams(M=4, ef_construction=20))
    assert idx.audit() == []
    for node in range(len(idx)):
        assert len(idx.neighbours(node, 0)) <= idx.params.M0
        for layer in range(1, int(idx.levels[node]) + 1):
            assert len(idx.neighbours(node, layer)) <= idx.params.M


def test_recall_at_10_on_1000_vectors(idx1000, queries):
    vecs, idx = idx1000
    hits = 0
    for q in queries:
        got = {n.id for n in idx.search(q, k=10, ef_search=64)}
        hits += len(got & brute_topk(vecs, q, 10))
    assert hits / (10 * len(queries)) >= 0.95


def test_overlap_4_of_5_on_500_vectors(queries):
    vecs = unit_rows(500, 64, seed=5)
    idx = annindex.build(items_from(vecs))
    good = 0
    for q in queries:
        got = {n.id for n in idx.search(q, k=5)}
        good += len(got & brute_topk(vecs, q, 5)) >= 4
    assert good / len(queries) >= 0.95


def test_ef_at_least_n_is_exact():
    vecs = unit_rows(120, 16, seed=8)
    idx = annindex.build(items_from(vecs), HnswParams(M=4, ef_construction=16))
    for q in unit_rows(30, 16, seed=9):
        approx = idx.search(q, k=10, ef_search=len(idx))
        exact = idx.exact(q, k=10)
        assert [n.id for n in approx] == [n.id for n in exact]
        assert [n.cosine_similarity for n in approx] == [n.cosine_similarity for n in exact]


def test_recall_monotone_in_ef(idx1000, queries):
    vecs, idx = idx1000
    recalls = []
    for ef in (10, 40, 160):
        hits = sum(len({n.id for n in idx.search(q, 10, ef)} & brute_topk(vecs, q, 10)) for q in queries)
        recalls.append(hits)
    assert recalls == sorted(recalls)


def test_exact_search_matches_brute_force():
    vecs = unit_rows(50, 8, seed=2)
    its = items_from(vecs)
    q = unit_rows(1, 8, seed=3)[0]
    res = exact_search(its, q, 5)
    sims = vecs.astype(np.float64) @ q
    assert [n.id for n in res] == np.argsort(-sims, kind="stable")[:5].tolist()
    assert [n.cosine_similarity for n in res] == pytest.approx(np.sort(sims)[::-1][:5], abs=1e-6)


def test_same_seed_same_graph():
    vecs = unit_rows(200, 16, seed=4)
    a = annindex.build(items_from(vecs), HnswParams(M=6, ef_construction=30, seed=3))
    b = annindex.build(items_from(vecs), HnswParams(M=6, ef_construction=30, seed=3))
    assert a.graph_digest() == b.graph_digest()


def test_item_order_does_not_matter():
    vecs = unit_rows(80, 16, seed=4)
    its = items_from(vecs)
    a = annindex.build(its)
    b = annindex.build(list(reversed(its)))
    assert a.graph_digest() == b.graph_digest()


def test_save_load_round_trip(tmp_path):
    vecs = unit_rows(100, 16, seed=12)
    idx = annindex.build(items_from(vecs), HnswParams(M=6, ef_construction=30), meta={"tag": "x"})
    path = tmp_path / "i.oah"
    idx.save(path)
    back = annindex.load(path)
    assert back.meta == {"tag": "x"}
    assert back.graph_digest() == idx.graph_digest()
    assert back.params == idx.params
    for q in unit_rows(50, 16, seed=13):
        a, b = idx.search(q, k=5), back.search(q, k=5)
        assert [(n.id, n.key, n.cosine_similarity, n.payload) for n in a] == [
            (n.id, n.key, n.cosine_similarity, n.payload) for n in b
        ]


def test_truncated_snapshot_is_rejected():
    idx = annindex.build(items_from(unit_rows(20, 8, seed=1)))
    blob = idx.to_bytes()
    with pytest.raises(ChecksumMismatch):
        HnswIndex.from_bytes(blob[:-10])
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        HnswIndex.from_bytes(bytes(flipped))


def test_foreign_magic_is_rejected():
    with pytest.raises(VersionMismatch):
        HnswIndex.from_bytes(b"NOPE" + b"\0" * 64)


def test_k_larger_than_n_returns_everything():
    vecs = unit_rows(7, 8, seed=1)
    idx = annindex.build(items_from(vecs))
    res = idx.search(vecs[2], k=50)
    assert sorted(n.id for n in res) == list(range(7))
    sims = [n.cosine_similarity for n in res]
    assert sims == sorted(sims, reverse=True)


def test_input_errors():
    idx = annindex.build(items_from(unit_rows(5, 8, seed=1)))
    with pytest.raises(DimensionMismatch):
        idx.search(np.ones(9, dtype=np.float32) / 3.0, k=1)
    with pytest.raises(EmptyInput):
        annindex.build([])
    with pytest.raises(EmptyIndex):
        exact_search([], np.ones(8), 1)
    with pytest.raises(NormViolation):
        annindex.build([IndexedItem(0, "a", np.ones(4, dtype=np.float32))])
    with pytest.raises(DimensionMismatch):
        annindex.build([IndexedItem(0, "a", np.eye(3)[0]), IndexedItem(1, "b", np.eye(4)[0])])
    with pytest.raises(ValueError):
        idx.search(np.eye(8)[0], k=0)


def test_params_validation():
    with pytest.raises(ValueError):
        HnswParams(M=1)
    with pytest.raises(ValueError):
        HnswParams(M=16, ef_construction=8)
    assert HnswParams(M=8).M0 == 16
