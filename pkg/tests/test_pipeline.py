import json
import time

import httpx
import numpy as np
import pytest

from occu_align import cli, provenance
from occu_align.corpus import load_catalogue
from occu_align.encoder import load_precomputed
from occu_align.encoder.hashed import HashedNgramEncoder
from occu_align.errors import ConfigInvalid, MissingDependency
from occu_align.pipeline import PipelineConfig, Stage, load_classifier, run_stage, stage_ingest
from conftest import SAMPLE, write_jsonl

CONFIG = """
seed = 0
k = 1
ablation = "word-order"

[paths]
source = "{d}/raw.jsonl"
catalogue = "{d}/catalogue.jsonl"
triplets = "{d}/triplets.jsonl"
encoder = "{d}/encoder.oae"
index = "{d}/index.oah"
test = "{d}/catalogue.jsonl"
report_dir = "{d}/reports"
export = "{d}/vectors.oav"

[triplets]
schemes = ["subgroup", "requirement"]
per_anchor = 2

[encoder]
dim = 64
matryoshka_dims = [32, 64]
hash_buckets = 65536
epochs = 2
batch_size = 32

[hnsw]
M = 8
ef_construction = 40
ef_search = 32
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    (d / "raw.jsonl").write_text(SAMPLE.read_text("utf-8"), "utf-8")
    cfg = d / "pipeline.toml"
    cfg.write_text(CONFIG.format(d=d.as_posix()), "utf-8")
    for verb in ("ingest", "triplets", "train", "index"):
        assert run(verb, "--config", cfg) == 0, verb
    return d, cfg


def test_train_without_triplets(tmp_path):
    cfg = PipelineConfig().override("paths.triplets", str(tmp_path / "missing.jsonl"))
    with pytest.raises(MissingDependency) as err:
        run_stage(Stage.train, cfg)
    assert "triplets" in str(err.value)
    assert run("train", "--triplets", tmp_path / "missing.jsonl", "--out", tmp_path / "e.oae") == 3


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("k = 0\n", "utf-8")
    assert run("classify", "--config", bad, "--title", "Koch") == 2
    bad.write_text("[encoder]\nwidth = 3\n", "utf-8")
    with pytest.raises(ConfigInvalid) as err:
        PipelineConfig.load(bad)
    assert err.value.field == "encoder.width"
    assert run("classify", "--config", tmp_path / "nope.toml", "--title", "Koch") == 3


def test_artifacts_carry_provenance(work):
    d, _ = work
    for name, stage in (("catalogue.jsonl", "ingest"), ("triplets.jsonl", "triplets"),
                        ("encoder.oae", "train"), ("index.oah", "index")):
        prov = provenance.read(d / name)
        assert prov["stage"] == stage
        assert prov["format_version"] == provenance.FORMAT_VERSION
        assert "config_hash" in prov and "seed" in prov
    assert provenance.read(d / "triplets.jsonl")["seed"] == 0


def test_stages_are_idempotent(work, tmp_path):
    d, cfg = work
    before = {n: (d / n).read_bytes() for n in ("catalogue.jsonl", "triplets.jsonl", "encoder.oae", "index.oah")}
    for verb in ("ingest", "triplets", "train", "index"):
        assert run(verb, "--config", cfg) == 0
    for n, blob in before.items():
        assert (d / n).read_bytes() == blob, n
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert run("eval", "--config", cfg, "--out", out1) == 0
    assert run("eval", "--config", cfg, "--out", out2) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert out1.with_suffix(".csv").read_bytes() == out2.with_suffix(".csv").read_bytes()
    assert "per_query_ms" in json.loads(out1.with_suffix(".timing.json").read_text())


def test_hash_mismatch_needs_force(work, tmp_path):
    d, cfg = work
    text = cfg.read_text("utf-8")
    # triplets produced under different sampling settings
    other = tmp_path / "other.toml"
    other.write_text(text.replace("per_anchor = 2", "per_anchor = 3")
                     .replace(f"{d.as_posix()}/encoder.oae", f"{tmp_path.as_posix()}/enc0.oae"), "utf-8")
    assert run("train", "--config", other) == 2
    assert run("train", "--config", other, "--force") == 0
    # a different encoder: the existing index no longer matches it
    retrained = tmp_path / "retrained.toml"
    retrained.write_text(text.replace("epochs = 2", "epochs = 1")
                         .replace(f"{d.as_posix()}/encoder.oae", f"{tmp_path.as_posix()}/enc1.oae"), "utf-8")
    assert run("train", "--config", retrained) == 0
    with pytest.raises(ConfigInvalid):
        load_classifier(PipelineConfig.load(retrained))
    assert run("classify", "--config", retrained, "--title", "Koch") == 2
    assert run("classify", "--config", retrained, "--title", "Koch", "--force") == 0
    # the original encoder under the changed encoder settings
    stale = tmp_path / "stale.toml"
    stale.write_text(text.replace("epochs = 2", "epochs = 1"), "utf-8")
    assert run("classify", "--config", stale, "--title", "Koch") == 2


def test_classify_cli(work, capsys):
    d, cfg = work
    rec = load_catalogue(d / "catalogue.jsonl").records[0]
    capsys.readouterr()
    code = run("classify", "--config", cfg, "--title", rec.term, "--qualification", rec.qualification.value,
               "--skills", ";".join(rec.skills), "--k", 3)
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["neighbors"]) == 3
    assert out["kldb"] == out["kldb_by_level"]["type"]


def test_unknown_qualification_exit_4(work):
    _, cfg = work
    assert run("classify", "--config", cfg, "--title", "Koch", "--qualification", "Zauberlehrling") == 4


def test_export_vectors_round_trip(work, tmp_path):
    d, cfg = work
    for name in ("v.oav", "v.jsonl"):
        out = tmp_path / name
        assert run("export-vectors", "--config", cfg, "--out", out) == 0
        prov = load_precomputed(out)
        enc = HashedNgramEncoder.load(d / "encoder.oae")
        recs = load_catalogue(d / "catalogue.jsonl").records
        texts = list(dict.fromkeys(r.query().text for r in recs))
        assert len(prov.lookup) == len(texts)
        got = np.stack([prov.embed(t) for t in texts[:10]])
        np.testing.assert_allclose(got, enc.embed_many(texts[:10]), atol=1e-6)
        assert provenance.read(out)["stage"] == "export-vectors"
    # an index built from the exported vectors matches the encoder-built one
    idx = tmp_path / "from_vectors.oah"
    assert run("index", "--config", cfg, "--vectors", tmp_path / "v.oav", "--out", idx, "--force") == 0
    from occu_align import annindex

    assert annindex.load(idx).graph_digest() == annindex.load(d / "index.oah").graph_digest()


def test_ablate_cli(work, tmp_path):
    _, cfg = work
    out = tmp_path / "abl.json"
    assert run("ablate", "--config", cfg, "--kind", "identity", "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["delta_pp"]["subgroup"] == {"accuracy": 0.0, "f1": 0.0}


def test_sample_corpus_latency(work):
    _, cfg = work
    clf = load_classifier(PipelineConfig.load(cfg))
    recs = load_catalogue(SAMPLE).records
    clf.classify(recs[0].term)  # warm-up (JIT)
    times = []
    for r in recs:
        t0 = time.perf_counter()
        clf.classify(r.term, r.qualification, r.skills)
        times.append(time.perf_counter() - t0)
    assert np.percentile(times, 95) < 0.050


def test_ingest_enrichment_and_rejects(tmp_path):
    rows = [
        {"term": "Koch", "kldb": "29302", "qualification": "Duale Ausbildung", "skills": ["Kochen"]},
        {"term": "Bäcker", "kldb": "29202", "berufenet_id": 42},
        {"term": "", "kldb": "29202", "qualification": "Duale Ausbildung"},
        "{not json",
        {"term": "Koch", "kldb": "2930", "qualification": "Duale Ausbildung"},
    ]
    write_jsonl(tmp_path / "raw.jsonl", rows)

    def handler(request):
        assert request.url.path == "/occupations/42"
        return httpx.Response(200, json={"skills": ["Backen", "Teig"], "qualification": "Duale Ausbildung"})

    cfg = (PipelineConfig()
           .override("paths.source", str(tmp_path / "raw.jsonl"))
           .override("paths.catalogue", str(tmp_path / "cat.jsonl"))
           .override("paths.report_dir", str(tmp_path / "rep"))
           .override("berufenet_url", "http://db.test"))
    res = stage_ingest(cfg, client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert res.output == {"records": 2, "rejects": 3}
    cat = load_catalogue(tmp_path / "cat.jsonl")
    assert [r.term for r in cat.records] == ["Koch", "Bäcker"]
    assert cat.records[1].skills == ("Backen", "Teig")
    rejects = [json.loads(l) for l in (tmp_path / "rep" / "ingest_rejects.jsonl").read_text().splitlines()]
    assert [r["line"] for r in rejects] == [3, 4, 5]
    assert rejects[0]["error"] == "EmptyTitle"


def test_help_documents_every_verb(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for verb in ("ingest", "triplets", "train", "index", "classify", "serve", "eval", "ablate", "export-vectors"):
        assert verb in out


def test_synth_and_split_verbs(tmp_path):
    assert run("synth", "--out", tmp_path / "s.jsonl", "--limit", 100) == 0
    assert len(load_catalogue(tmp_path / "s.jsonl").records) == 100
    assert run("split", "--in", tmp_path / "s.jsonl", "--train-out", tmp_path / "tr.jsonl",
               "--test-out", tmp_path / "te.jsonl") == 0
    assert len(load_catalogue(tmp_path / "te.jsonl").records) == 20
