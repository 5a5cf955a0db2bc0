import struct

import numpy as np
import pytest
from scipy import sparse

from occu_align.encoder import (
    EncoderConfig,
    HashedNgramEncoder,
    LinearBaseline,
    TruncatedProvider,
    featurize,
    linear_baseline_train,
    load_precomputed,
    read_vectors,
    sparse_topk,
    tfidf_provider,
    train_encoder,
    write_vectors,
)
from occu_align.errors import (
    ChecksumMismatch,
    ConfigInvalid,
    EmptyCorpus,
    EmptyTripletSet,
    HeaderMismatch,
    NonFiniteLoss,
    NotEmbeddable,
    SingleClass,
    UnknownText,
    VersionMismatch,
)
from occu_align.tripletgen import Triplet, TripletScheme

SMALL = dict(dim=16, matryoshka_dims=(8, 16), hash_buckets=2**12)


class TestFeaturize:
    def test_empty(self):
        assert len(featurize("")) == 0

    def test_short(self):
        assert len(featurize("ab")) == 0
        assert len(featurize("[SKILL_SEP]ab")) == 1

    def test_exactly_one(self):
        f = featurize("abc")
        assert len(f) == 1 and f.values[0] == 1.0

    def test_counts_and_lowercase(self):
        assert np.array_equal(featurize("ABCABC").indices, featurize("abcabc").indices)
        # abc, bca, cab, abc -> 3 distinct trigrams, abc twice (plus 4/5-grams)
        f = featurize("abcabc", ngram_range=(3, 3))
        assert sorted(f.values.tolist()) == [1.0, 1.0, 2.0]

    def test_separators_atomic(self):
        f = featurize("[JOB_TITLE_SEP]")
        assert len(f) == 1
        # n-grams never straddle a separator
        a = featurize("ab[SKILL_SEP]cd", ngram_range=(3, 3))
        assert len(a) == 1

    def test_stable_hash(self):
        assert featurize("Koch").indices.tolist() == featurize("Koch").indices.tolist()


class TestConfig:
    @pytest.mark.parametrize("kw,field", [
        (dict(matryoshka_dims=(128, 64)), "matryoshka_dims"),
        (dict(matryoshka_dims=(64, 512)), "matryoshka_dims"),
        (dict(scale=0), "scale"),
        (dict(hash_buckets=1000), "hash_buckets"),
        (dict(dim=2048, matryoshka_dims=(64,)), "dim"),
        (dict(matryoshka_weights=(1.0,)), "matryoshka_weights"),
    ])
    def test_invalid(self, kw, field):
        with pytest.raises(ConfigInvalid) as ei:
            EncoderConfig(**kw)
        assert ei.value.field == field

    def test_json_round_trip(self):
        c = EncoderConfig(**SMALL, matryoshka_weights=(0.5, 1.0))
        assert EncoderConfig.from_json(c.to_json()) == c
        assert c.hash() == EncoderConfig.from_json(c.to_json()).hash()


def _toy_triplets():
    # two lexical families; positives share the family stem
    fam = {"a": ["Bäcker", "Bäckerin", "Bäckereiverkäufer", "Bäckermeister"],
           "b": ["Elektriker", "Elektrikerin", "Elektroniker", "Elektromeister"]}
    out = []
    for key, mine in fam.items():
        other = fam["b" if key == "a" else "a"]
        for i, t in enumerate(mine):
            for j in range(1, 3):
                out.append(Triplet(t, mine[(i + j) % 4], other[(i + j) % 4], TripletScheme.Subgroup4Digit, key))
    return out


class TestTraining:
    def test_loss_decreases(self):
        enc = train_encoder(_toy_triplets(), EncoderConfig(**SMALL, epochs=5, batch_size=4))
        losses = enc.training_log.epoch_losses
        assert len(losses) == 5 and losses[-1] < losses[0]

    def test_deterministic(self):
        cfg = EncoderConfig(**SMALL, epochs=2, batch_size=4, seed=3)
        a, b = train_encoder(_toy_triplets(), cfg), train_encoder(_toy_triplets(), cfg)
        assert np.array_equal(a.weights, b.weights) and a.checksum() == b.checksum()

    def test_toy_anchor_closer_to_positive(self):
        tri = _toy_triplets()
        enc = train_encoder(tri, EncoderConfig(**SMALL, epochs=10, batch_size=4))
        picks = tri[::4][:4]
        wins = sum(float(enc.embed(t.anchor) @ enc.embed(t.positive)) > float(enc.embed(t.anchor) @ enc.embed(t.negative))
                   for t in picks)
        assert wins >= 3

    def test_empty(self):
        with pytest.raises(EmptyTripletSet):
            train_encoder([], EncoderConfig(**SMALL))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite(self):
        cfg = EncoderConfig(**SMALL, learning_rate=1e300, init_std=1e300, epochs=3, batch_size=4)
        with pytest.raises(NonFiniteLoss):
            train_encoder(_toy_triplets(), cfg)


class TestProvider:
    def test_unit_and_deterministic(self):
        enc = HashedNgramEncoder(EncoderConfig(**SMALL))
        v = enc.embed("Koch")
        assert v.shape == (16,) and abs(np.linalg.norm(v) - 1) < 1e-6
        assert np.array_equal(v, enc.embed("Koch"))
        assert np.array_equal(enc.embed_many(["Koch", "Bäcker"])[0], v)

    def test_not_embeddable(self):
        with pytest.raises(NotEmbeddable):
            HashedNgramEncoder(EncoderConfig(**SMALL)).embed("ab")

    def test_truncated(self):
        enc = HashedNgramEncoder(EncoderConfig(**SMALL))
        t = TruncatedProvider(enc, 8)
        v = t.embed("Koch")
        assert t.dim() == 8 and abs(np.linalg.norm(v) - 1) < 1e-6
        full = enc.embed("Koch")[:8]
        assert np.allclose(v, full / np.linalg.norm(full), atol=1e-6)

    def test_snapshot_round_trip(self, tmp_path):
        enc = train_encoder(_toy_triplets(), EncoderConfig(**SMALL, epochs=1, batch_size=4))
        enc.provenance = {"seed": 0, "config_hash": "abc", "format_version": 1}
        p = tmp_path / "e.oae"
        enc.save(p)
        back = HashedNgramEncoder.load(p)
        assert back.config == enc.config and np.array_equal(back.weights, enc.weights)
        assert back.checksum() == enc.checksum() and back.provenance == enc.provenance

    def test_snapshot_corruption(self, tmp_path):
        enc = HashedNgramEncoder(EncoderConfig(**SMALL))
        p = tmp_path / "e.oae"
        enc.save(p)
        blob = bytearray(p.read_bytes())
        blob[100] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(ChecksumMismatch):
            HashedNgramEncoder.load(p)
        p.write_bytes(b"XXXX" + bytes(blob[4:]))
        with pytest.raises(VersionMismatch):
            HashedNgramEncoder.load(p)


TEXTS = ["Bäckermeister", "Bäckerin", "Elektriker", "Elektronikerin", "Koch", "Köchin", "Softwareentwickler",
         "bäcker und konditor"]


class TestTfidf:
    def test_sklearn_oracle(self):
        from sklearn.feature_extraction.text import TfidfVectorizer

        tf = tfidf_provider(TEXTS, hash_buckets=2**22)
        ours = tf.transform(TEXTS)
        ref = TfidfVectorizer(analyzer="char", ngram_range=(3, 5), lowercase=True, smooth_idf=True,
                              norm="l2").fit_transform(TEXTS)
        assert np.allclose((ours @ ours.T).toarray(), (ref @ ref.T).toarray(), atol=1e-10)

    def test_idf_floor(self):
        tf = tfidf_provider(["abc", "abc", "abcd"], hash_buckets=2**16)
        idx = featurize("abc", 2**16).indices[0]
        assert tf.idf[idx] == pytest.approx(np.log(4 / 4) + 1)  # df = N
        only = featurize("bcd", 2**16).indices[0]
        assert tf.idf[only] == pytest.approx(np.log(4 / 2) + 1)

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            tfidf_provider([])
        with pytest.raises(NotEmbeddable):
            tfidf_provider(TEXTS).embed("")

    def test_identical_cosine_one(self):
        tf = tfidf_provider(TEXTS)
        assert float(tf.embed("Bäckerin") @ tf.embed("Bäckerin")) == pytest.approx(1.0)

    def test_sparse_topk_matches_dense_and_breaks_ties_by_id(self):
        tf = tfidf_provider(TEXTS)
        items = tf.transform(TEXTS + ["Koch"])
        ids, sims = sparse_topk(tf.transform(["Koch"]), items, 3)
        assert ids[0, 0] == 4 and ids[0, 1] == 8  # duplicate tie -> lower id first
        dense = (tf.transform(["Koch"]) @ items.T).toarray()[0]
        assert np.allclose(sims[0], np.sort(dense)[::-1][:3])


class TestLinear:
    def test_separable(self):
        x = sparse.csr_matrix(np.array([[1, 0], [2, 0], [0, 1], [0, 3]], dtype=float))
        y = ["a", "a", "b", "b"]
        assert linear_baseline_train(x, y).predict(x) == y

    def test_identical_features_majority(self):
        x = sparse.csr_matrix(np.ones((5, 3)))
        assert set(LinearBaseline().fit(x, ["a", "b", "b", "b", "a"]).predict(x)) == {"b"}

    def test_three_class_scores_oracle(self):
        rng = np.random.default_rng(0)
        x = sparse.csr_matrix(rng.random((30, 6)) * (rng.random((30, 6)) > 0.5))
        y = [str(i % 3) for i in range(30)]
        m = LinearBaseline(iterations=50).fit(x, y)
        dense = x.toarray()
        for i in range(30):
            scores = {c: sum(dense[i, m._cols[j]] * m.coef_[j, k] for j in range(len(m._cols))) + m.intercept_[k]
                      for k, c in enumerate(m.classes_)}
            best = max(scores.values())
            expected = min(c for c, s in scores.items() if abs(s - best) < 1e-12)
            assert m.predict(x[i])[0] == expected

    def test_agrees_with_sklearn_on_separable_text(self):
        from sklearn.linear_model import LogisticRegression

        texts = ["Bäcker", "Bäckerin", "Bäckermeister", "Elektriker", "Elektrikerin", "Elektromeister"]
        y = ["B", "B", "B", "E", "E", "E"]
        tf = tfidf_provider(texts)
        x = tf.transform(texts)
        ours = LinearBaseline().fit(x, y)
        ref = LogisticRegression(C=1e4, max_iter=1000).fit(x, y)
        q = tf.transform(["Bäckereimeister", "Elektrikermeisterin"])
        assert ours.predict(q) == list(ref.predict(q))

    def test_single_class(self):
        with pytest.raises(SingleClass):
            LinearBaseline().fit(sparse.csr_matrix(np.ones((2, 2))), ["a", "a"])


class TestVectors:
    @pytest.mark.parametrize("suffix", [".oav", ".jsonl"])
    def test_round_trip_bit_exact(self, tmp_path, suffix):
        v = np.random.default_rng(0).standard_normal((2, 5)).astype(np.float32)
        p = tmp_path / f"v{suffix}"
        write_vectors(p, ["a", "b"], v)
        keys, back = read_vectors(p)
        assert keys == ["a", "b"] and np.array_equal(back, v)
        prov = load_precomputed(p)
        assert np.array_equal(prov.embed("b"), v[1]) and prov.dim() == 5
        with pytest.raises(UnknownText):
            prov.embed("c")

    def test_binary_layout(self, tmp_path):
        p = tmp_path / "v.oav"
        write_vectors(p, ["k"], np.array([[1.0, 2.0]], dtype=np.float32))
        blob = p.read_bytes()
        assert blob[:4] == b"OAV1" and struct.unpack_from("<IQ", blob, 4) == (2, 1)
        assert struct.unpack_from("<I", blob, 16) == (1,) and blob[20:21] == b"k"
        assert struct.unpack_from("<2f", blob, 21) == (1.0, 2.0) and len(blob) == 29

    def test_header_dim_mismatch(self, tmp_path):
        p = tmp_path / "v.oav"
        write_vectors(p, ["a", "b"], np.ones((2, 4), dtype=np.float32))
        blob = bytearray(p.read_bytes())
        struct.pack_into("<I", blob, 4, 3)
        p.write_bytes(bytes(blob))
        with pytest.raises(HeaderMismatch):
            read_vectors(p)

    def test_jsonl_dim_mismatch(self, tmp_path):
        p = tmp_path / "v.jsonl"
        p.write_text('{"dim": 3, "count": 1}\n{"key": "a", "vector": [1, 2]}\n')
        with pytest.raises(HeaderMismatch):
            read_vectors(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "v.oav"
        p.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(VersionMismatch):
            read_vectors(p)
