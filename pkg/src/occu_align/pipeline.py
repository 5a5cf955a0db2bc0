"""Pipeline configuration and stage runner.

A single TOML file describes the whole pipeline; CLI flags override single
keys. Each stage reads its inputs, checks their provenance against the
current configuration and writes deterministic artifacts.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import httpx

from . import annindex, provenance
from .annindex import HnswIndex, HnswParams
from .classifier import Classifier, catalogue_items
from .corpus import (
    OccupationRecord,
    fetch_occupation_details,
    load_catalogue,
    record_from_json,
    write_catalogue,
)
from .encoder import EncoderConfig, HashedNgramEncoder, load_precomputed, train_encoder, write_vectors
from .errors import ConfigInvalid, EmptyInput, MalformedRecord, MissingDependency, OccuAlignError
from .iscedmap import IscedRule, default_ruleset, load_ruleset, ruleset_to_json
from .tripletgen import TripletScheme, build_triplets, dedup_and_merge, read_triplets, write_triplets

log = logging.getLogger("occu_align.pipeline")


class Stage(str, enum.Enum):
    ingest = "ingest"
    triplets = "triplets"
    train = "train"
    index = "index"
    classify = "classify"
    serve = "serve"
    eval = "eval"
    ablate = "ablate"
    export_vectors = "export-vectors"


@dataclass
class Paths:
    source: str = ""  # raw catalogue for ingest
    catalogue: str = "work/catalogue.jsonl"
    triplets: str = "work/triplets.jsonl"
    encoder: str = "work/encoder.oae"
    vectors: str = ""  # precomputed item vectors; used by index instead of the encoder
    index: str = "work/index.oah"
    isced_rules: str = ""  # empty = bundled default ruleset
    test: str = ""
    report_dir: str = "work/reports"
    report: str = ""  # eval report path; default <report_dir>/report.json
    export: str = "work/vectors.oav"


@dataclass
class TripletSettings:
    schemes: tuple[str, ...] = ("subgroup", "requirement")
    per_anchor: int = 3


@dataclass
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8000


@dataclass
class QuerySettings:
    title: str = ""
    qualification: str = ""
    skills: tuple[str, ...] = ()
    managerial: bool = False


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hnsw: HnswParams = field(default_factory=HnswParams)
    triplets: TripletSettings = field(default_factory=TripletSettings)
    service: ServiceSettings = field(default_factory=ServiceSettings)
    query: QuerySettings = field(default_factory=QuerySettings)
    k: int = 1
    seed: int = 0
    ablation: str = "word-order"
    berufenet_url: str = ""
    log_level: str = "INFO"
    force: bool = False
    source_file: str | None = None  # set when loaded from a file

    def __post_init__(self):
        if self.k < 1:
            raise ConfigInvalid("k", "must be >= 1")
        if self.triplets.per_anchor < 1:
            raise ConfigInvalid("triplets.per_anchor", "must be >= 1")
        for s in self.triplets.schemes:
            try:
                TripletScheme(s)
            except ValueError:
                raise ConfigInvalid("triplets.schemes", f"unknown scheme {s!r}") from None
        if not 0 < self.service.port < 65536:
            raise ConfigInvalid("service.port", "must be in 1..65535")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigInvalid("log_level", f"unknown level {self.log_level!r}")

    # ---- (de)serialization
    def to_json(self) -> dict:
        return {
            "paths": asdict(self.paths),
            "encoder": self.encoder.to_json(),
            "hnsw": self.hnsw.to_json(),
            "triplets": {"schemes": list(self.triplets.schemes), "per_anchor": self.triplets.per_anchor},
            "service": asdict(self.service),
            "k": self.k,
            "seed": self.seed,
            "ablation": self.ablation,
            "log_level": self.log_level,
        }

    @classmethod
    def from_dict(cls, data: dict, source_file: str | None = None) -> "PipelineConfig":
        data = dict(data)
        known = {"paths", "encoder", "hnsw", "triplets", "service", "query", "k", "seed", "ablation",
                 "berufenet_url", "log_level"}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown setting")
        kw: dict[str, Any] = {}
        sections = {"paths": Paths, "triplets": TripletSettings, "service": ServiceSettings, "query": QuerySettings}
        for name, typ in sections.items():
            if name in data:
                kw[name] = _section(typ, data.pop(name), name)
        if "encoder" in data:
            enc = dict(data.pop("encoder"))
            for key in ("matryoshka_dims", "ngram_range", "matryoshka_weights"):
                if isinstance(enc.get(key), list):
                    enc[key] = tuple(enc[key])
            kw["encoder"] = _construct(EncoderConfig.from_json, enc, "encoder")
        if "hnsw" in data:
            kw["hnsw"] = _section(HnswParams, data.pop("hnsw"), "hnsw")
        for key, value in data.items():
            kw[key] = value
        try:
            return cls(**kw, source_file=source_file)
        except TypeError as exc:
            raise ConfigInvalid("config", str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = tomllib.loads(Path(path).read_text("utf-8"))
        except OSError as exc:
            raise MissingDependency(f"config file {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid("config", f"{path} is not valid TOML: {exc}") from None
        return cls.from_dict(data, str(path))

    def override(self, key: str, value: Any) -> "PipelineConfig":
        """Return a copy with one dotted key (``hnsw.M``, ``k``) replaced."""
        head, _, rest = key.partition(".")
        if not hasattr(self, head) or head == "source_file":
            raise ConfigInvalid(key, "unknown setting")
        if not rest:
            return replace(self, **{head: value})
        section = getattr(self, head)
        if not hasattr(section, "__dataclass_fields__") or rest not in section.__dataclass_fields__:
            raise ConfigInvalid(key, "unknown setting")
        try:
            new_section = replace(section, **{rest: value})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigInvalid):
                raise
            raise ConfigInvalid(key, str(exc)) from None
        return replace(self, **{head: new_section})

    # ---- provenance hashes
    def section_hash(self, *names: str) -> str:
        full = self.to_json()
        blob = json.dumps({n: full[n] for n in names}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _construct(fn: Callable, data: dict, name: str):
    try:
        return fn(data)
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{name}.{exc.field}", str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(name, str(exc)) from None


def _section(typ, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(name, "must be a table")
    allowed = {f.name for f in fields(typ)}
    for key in data:
        if key not in allowed:
            raise ConfigInvalid(f"{name}.{key}", "unknown setting")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return _construct(lambda d: typ(**d), data, name)


# --------------------------------------------------------------------------
# stage helpers
# --------------------------------------------------------------------------


def _need(path: str, artifact: str) -> Path:
    if not path or not Path(path).exists():
        raise MissingDependency(artifact)
    return Path(path)


def _out(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _check_hash(cfg: PipelineConfig, artifact: str, recorded: dict | None, expected: str) -> None:
    """Refuse artifacts produced under a different configuration.

    Only enforced when the configuration came from a file: ad-hoc CLI runs
    without ``--config`` cannot know the upstream settings.
    """
    if cfg.source_file is None or cfg.force:
        return
    got = (recorded or {}).get("config_hash")
    if got != expected:
        raise ConfigInvalid(
            artifact,
            f"artifact was built with config hash {got}, current config gives {expected}; "
            "rerun the producing stage or pass --force",
        )


def _ruleset(cfg: PipelineConfig) -> list[IscedRule]:
    if cfg.paths.isced_rules:
        return load_ruleset(_need(cfg.paths.isced_rules, "isced_rules"))
    return default_ruleset()


def _ruleset_hash(rules: list[IscedRule]) -> str:
    return hashlib.sha256(json.dumps(ruleset_to_json(rules), sort_keys=True).encode()).hexdigest()[:16]


def _records(path: str, artifact: str) -> list[OccupationRecord]:
    cat = load_catalogue(_need(path, artifact))
    if not cat.records:
        raise EmptyInput(f"{artifact} {path} has no valid records")
    return cat.records


def triplets_hash(cfg: PipelineConfig) -> str:
    return cfg.section_hash("triplets", "seed")


def encoder_hash(cfg: PipelineConfig) -> str:
    return cfg.section_hash("encoder")


def load_encoder(cfg: PipelineConfig) -> HashedNgramEncoder:
    enc = HashedNgramEncoder.load(_need(cfg.paths.encoder, "encoder"))
    _check_hash(cfg, "encoder", enc.provenance, encoder_hash(cfg))
    return enc


def load_index(cfg: PipelineConfig, encoder: HashedNgramEncoder | None = None) -> HnswIndex:
    index = annindex.load(_need(cfg.paths.index, "index"))
    _check_hash(cfg, "index", index.meta.get("provenance"), cfg.section_hash("hnsw"))
    built_with = index.meta.get("encoder_checksum")
    if encoder is not None and built_with and built_with != encoder.checksum() and not cfg.force:
        raise ConfigInvalid(
            "index", "index was built with a different encoder snapshot; rebuild it or pass --force"
        )
    return index


def load_classifier(cfg: PipelineConfig) -> Classifier:
    enc = load_encoder(cfg)
    return Classifier(enc, load_index(cfg, enc), cfg.k)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


@dataclass
class StageResult:
    stage: Stage
    artifacts: list[str] = field(default_factory=list)
    output: Any = None
    exit_code: int = 0


def stage_ingest(cfg: PipelineConfig, client: httpx.Client | None = None) -> StageResult:
    """Validate a raw catalogue, optionally filling skills and qualification
    from the occupational database for lines carrying ``berufenet_id``."""
    src = _need(cfg.paths.source, "source")
    records: list[OccupationRecord] = []
    rejects: list[dict] = []
    with open(src, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(f"invalid JSON: {exc.msg}") from None
                if provenance.is_header(obj):
                    continue
                if isinstance(obj, dict) and obj.get("berufenet_id") is not None:
                    if "skills" not in obj or "qualification" not in obj:
                        details = fetch_occupation_details(
                            cfg.berufenet_url or None, str(obj["berufenet_id"]), client=client
                        )
                        obj = dict(obj)
                        obj.setdefault("skills", details.skills)
                        obj.setdefault("qualification", details.qualification_raw)
                    obj = {k: v for k, v in obj.items() if k != "berufenet_id"}
                records.append(record_from_json(obj))
            except OccuAlignError as exc:
                rejects.append({"line": lineno, "error": type(exc).__name__, "message": str(exc)})
    if not records:
        raise EmptyInput(f"{src}: no valid records")
    prov = provenance.make("ingest", None, cfg.section_hash("paths"), source_sha256=provenance.file_sha256(src))
    out = _out(cfg.paths.catalogue)
    write_catalogue(records, out, prov)
    rej = _out(str(Path(cfg.paths.report_dir) / "ingest_rejects.jsonl"))
    rej.write_text("".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rejects), "utf-8")
    log.info("ingest: %d records, %d rejects", len(records), len(rejects))
    return StageResult(Stage.ingest, [str(out), str(rej)], {"records": len(records), "rejects": len(rejects)})


def stage_triplets(cfg: PipelineConfig) -> StageResult:
    records = _records(cfg.paths.catalogue, "catalogue")
    sets = [
        build_triplets(records, TripletScheme(s), cfg.triplets.per_anchor, cfg.seed)
        for s in cfg.triplets.schemes
    ]
    merged = dedup_and_merge(sets)
    prov = provenance.make(
        "triplets", cfg.seed, triplets_hash(cfg), catalogue_sha256=provenance.file_sha256(cfg.paths.catalogue)
    )
    out = _out(cfg.paths.triplets)
    write_triplets(merged, out, prov)
    log.info("triplets: %d (schemes %s)", len(merged), ",".join(cfg.triplets.schemes))
    return StageResult(Stage.triplets, [str(out)], {"triplets": len(merged)})


def stage_train(cfg: PipelineConfig) -> StageResult:
    path = _need(cfg.paths.triplets, "triplets")
    _check_hash(cfg, "triplets", provenance.read(path), triplets_hash(cfg))
    triplets = read_triplets(path)
    enc = train_encoder(triplets, cfg.encoder)
    enc.provenance = provenance.make(
        "train", cfg.encoder.seed, encoder_hash(cfg), triplets_sha256=provenance.file_sha256(path)
    )
    out = _out(cfg.paths.encoder)
    enc.save(out)
    return StageResult(Stage.train, [str(out)], {"epoch_losses": enc.training_log.epoch_losses,
                                                 "checksum": enc.checksum()})


def stage_index(cfg: PipelineConfig) -> StageResult:
    records = _records(cfg.paths.catalogue, "catalogue")
    rules = _ruleset(cfg)
    meta: dict[str, Any] = {"isced_rules": _ruleset_hash(rules)}
    if cfg.paths.vectors:
        provider = load_precomputed(_need(cfg.paths.vectors, "vectors"))
        meta["vectors_sha256"] = provenance.file_sha256(cfg.paths.vectors)
    else:
        provider = load_encoder(cfg)
        meta["encoder_checksum"] = provider.checksum()
    items = catalogue_items(records, provider, rules)
    meta["provenance"] = provenance.make(
        "index", cfg.hnsw.seed, cfg.section_hash("hnsw"),
        catalogue_sha256=provenance.file_sha256(cfg.paths.catalogue),
    )
    index = annindex.build(items, cfg.hnsw, meta)
    out = _out(cfg.paths.index)
    index.save(out)
    return StageResult(Stage.index, [str(out)], {"items": len(index), "digest": index.graph_digest()})


def stage_classify(cfg: PipelineConfig) -> StageResult:
    q = cfg.query
    if not q.title:
        raise ConfigInvalid("query.title", "a title is required")
    clf = load_classifier(cfg)
    res = clf.classify(q.title, q.qualification or None, list(q.skills), cfg.k, q.managerial)
    return StageResult(Stage.classify, [], res.to_json())


def _test_records(cfg: PipelineConfig) -> list[OccupationRecord]:
    return _records(cfg.paths.test, "test")


def stage_eval(cfg: PipelineConfig) -> StageResult:
    from .evalharness import KnnPipeline, evaluate

    clf = load_classifier(cfg)
    test = _test_records(cfg)
    config_echo = {
        "k": cfg.k,
        "encoder": clf.provider.id(),
        "index_items": len(clf.index),
        "hnsw": cfg.hnsw.to_json(),
        "test_sha256": provenance.file_sha256(cfg.paths.test),
    }
    report = evaluate(KnnPipeline(clf, f"knn-k{cfg.k}"), test, config=config_echo)
    out = _out(cfg.paths.report or str(Path(cfg.paths.report_dir) / "report.json"))
    csv_out, timing_out = out.with_suffix(".csv"), out.with_suffix(".timing.json")
    # timing varies between runs, so it lives next to the report
    stable = replace(report, timing={})
    out.write_text(stable.dumps() + "\n", "utf-8")
    csv_out.write_text(stable.to_csv(), "utf-8")
    timing_out.write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n", "utf-8")
    return StageResult(Stage.eval, [str(out), str(csv_out), str(timing_out)], report)


def stage_ablate(cfg: PipelineConfig) -> StageResult:
    from .evalharness import KnnPipeline, run_ablation

    clf = load_classifier(cfg)
    res = run_ablation(_test_records(cfg), cfg.ablation, KnnPipeline(clf))
    out = _out(cfg.paths.report or str(Path(cfg.paths.report_dir) / f"ablation-{res.perturbation}.json"))
    out.write_text(json.dumps(res.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
    return StageResult(Stage.ablate, [str(out)], res.to_json())


def stage_export_vectors(cfg: PipelineConfig) -> StageResult:
    """Embed every catalogue query; keys are the composed query texts, so the
    file can serve as a precomputed provider for the same catalogue."""
    records = _records(cfg.paths.catalogue, "catalogue")
    enc = load_encoder(cfg)
    keys = list(dict.fromkeys(r.query().text for r in records))
    vecs = enc.embed_many(keys)
    prov = provenance.make("export-vectors", cfg.encoder.seed, encoder_hash(cfg), encoder_checksum=enc.checksum())
    out = _out(cfg.paths.export)
    write_vectors(out, keys, vecs, prov)
    return StageResult(Stage.export_vectors, [str(out)], {"vectors": len(keys), "dim": int(vecs.shape[1])})


def stage_serve(cfg: PipelineConfig) -> StageResult:
    import uvicorn

    from .service import create_app

    app = create_app(load_classifier(cfg))
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port, log_level=cfg.log_level.lower())
    return StageResult(Stage.serve)


STAGES: dict[Stage, Callable[[PipelineConfig], StageResult]] = {
    Stage.ingest: stage_ingest,
    Stage.triplets: stage_triplets,
    Stage.train: stage_train,
    Stage.index: stage_index,
    Stage.classify: stage_classify,
    Stage.serve: stage_serve,
    Stage.eval: stage_eval,
    Stage.ablate: stage_ablate,
    Stage.export_vectors: stage_export_vectors,
}


def run_stage(stage: Stage | str, config: PipelineConfig) -> StageResult:
    """Run one stage; library errors propagate (callers map them to exit codes
    via ``exc.exit_code``)."""
    stage = Stage(stage)
    log.info("stage %s (config hash %s)", stage.value, config.section_hash("paths", "encoder", "hnsw", "triplets"))
    return STAGES[stage](config)
