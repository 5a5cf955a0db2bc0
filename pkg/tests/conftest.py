import json
from pathlib import Path

import pytest

from occu_align.corpus import OccupationRecord

ROOT = Path(__file__).resolve().parents[1]
SAMPLE = ROOT / "data" / "sample_catalogue.jsonl"


def rec(term, kldb, qual="Duale Ausbildung", skills=(), dqr=None):
    return OccupationRecord.create(term, kldb, qual, list(skills), dqr)


def write_jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r, ensure_ascii=False)) + "\n" for r in rows),
                    "utf-8")
    return path


@pytest.fixture(scope="session")
def sample_records():
    from occu_align.corpus import load_catalogue

    return load_catalogue(SAMPLE).records


@pytest.fixture(scope="session")
def small_model(sample_records):
    """Small encoder + index trained on the bundled sample catalogue."""
    from occu_align import annindex
    from occu_align.classifier import catalogue_items
    from occu_align.encoder import EncoderConfig, train_encoder
    from occu_align.tripletgen import TripletScheme, build_triplets, dedup_and_merge

    cfg = EncoderConfig(dim=64, matryoshka_dims=(32, 64), hash_buckets=2**16, epochs=3, batch_size=32)
    tri = dedup_and_merge([build_triplets(sample_records, s, 3, 0) for s in TripletScheme])
    enc = train_encoder(tri, cfg)
    index = annindex.build(catalogue_items(sample_records, enc), annindex.HnswParams(M=8, ef_construction=50))
    return enc, index


# acceptance criteria outcomes, printed as one line each after the run
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {title} -- {detail}")
