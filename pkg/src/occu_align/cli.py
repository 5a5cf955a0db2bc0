"""``occu-align`` command line.

Every verb maps onto one pipeline stage; flags override single keys of the
(optional) ``--config`` TOML file. Exit codes: 0 success, 2 configuration
error, 3 missing dependency / I/O, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigInvalid, OccuAlignError

log = logging.getLogger("occu_align")


def _skills(value: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in value.split(";") if s.strip())


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline TOML file (flags override its keys)")
    p.add_argument("--force", action="store_true", help="accept artifacts built under a different config hash")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default INFO)")
    p.add_argument("--isced-rules", help="ISCED ruleset JSON (default: bundled rules)")


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--index", help="index snapshot")
    p.add_argument("--encoder", help="encoder snapshot")
    p.add_argument("--k", type=int, help="neighbours to vote over (default 1)")
    p.add_argument("--ef-search", type=int, help="HNSW candidate list size at query time")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occu-align",
        description="Map German job titles to KldB 2010 codes and ISCED 2011 levels.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("ingest", help="validate a raw catalogue and fill details from the occupational database")
    _common(p)
    p.add_argument("--in", dest="source", help="raw catalogue (JSON Lines)")
    p.add_argument("--out", help="validated catalogue output")
    p.add_argument("--rejects-dir", help="directory for ingest_rejects.jsonl")
    p.add_argument("--berufenet-url", help="occupational database base URL (or $OCCU_BERUFENET_URL)")

    p = sub.add_parser("triplets", help="build anchor/positive/negative triplets")
    _common(p)
    p.add_argument("--scheme", action="append", choices=["subgroup", "requirement"],
                   help="triplet scheme; repeat for several (default: both, merged)")
    p.add_argument("--per-anchor", type=int, help="triplets per anchor (default 3)")
    p.add_argument("--seed", type=int, help="sampling seed (default 0)")
    p.add_argument("--in", dest="catalogue", help="catalogue (JSON Lines)")
    p.add_argument("--out", help="triplet output (JSON Lines)")

    p = sub.add_parser("train", help="train the hashed n-gram encoder")
    _common(p)
    p.add_argument("--triplets", help="triplet file")
    p.add_argument("--out", help="encoder snapshot output")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, help="training seed")

    p = sub.add_parser("index", help="embed a catalogue and build the HNSW index")
    _common(p)
    p.add_argument("--encoder", help="encoder snapshot used to embed the catalogue")
    p.add_argument("--vectors", help="precomputed vector file keyed by composed query text")
    p.add_argument("--catalogue", help="catalogue (JSON Lines)")
    p.add_argument("--out", help="index snapshot output")
    p.add_argument("--M", type=int, help="graph degree (default 16)")
    p.add_argument("--ef-construction", type=int, help="build candidate list size (default 200)")
    p.add_argument("--ef-search", type=int, help="default query candidate list size (default 64)")
    p.add_argument("--seed", type=int, help="level assignment seed")

    p = sub.add_parser("classify", help="classify one job title")
    _common(p)
    _model_args(p)
    p.add_argument("--title", required=True)
    p.add_argument("--qualification", help="qualification category or group")
    p.add_argument("--skills", default="", help='semicolon-separated, e.g. "a;b"')
    p.add_argument("--managerial", action="store_true", help="append the management-duties suffix")
    p.add_argument("--server", help="send the request to a running service at this URL instead")

    p = sub.add_parser("serve", help="run the HTTP service")
    _common(p)
    _model_args(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    p = sub.add_parser("eval", help="evaluate on a held-out catalogue")
    _common(p)
    _model_args(p)
    p.add_argument("--test", help="test catalogue (JSON Lines)")
    p.add_argument("--out", help="report JSON path (CSV and timing files are written next to it)")

    p = sub.add_parser("ablate", help="perturbation ablation on a held-out catalogue")
    _common(p)
    _model_args(p)
    p.add_argument("--kind", choices=["management", "gender", "word-order", "identity"])
    p.add_argument("--test", help="test catalogue (JSON Lines)")
    p.add_argument("--out", help="ablation JSON output")

    p = sub.add_parser("export-vectors", help="export catalogue embeddings for external use")
    _common(p)
    p.add_argument("--encoder", help="encoder snapshot")
    p.add_argument("--catalogue", help="catalogue (JSON Lines)")
    p.add_argument("--out", help="vector file (.oav binary, or .jsonl)")

    p = sub.add_parser("synth", help="generate a synthetic catalogue")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--titles-per-type", type=int, default=None)
    p.add_argument("--n-areas", type=int, default=None)
    p.add_argument("--limit", type=int, default=None, help="keep a stratified sample of this many records")

    p = sub.add_parser("split", help="stratified train/test split of a catalogue")
    p.add_argument("--in", dest="catalogue", required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    return parser


# flag -> config key, per verb
_OVERRIDES: dict[str, dict[str, str]] = {
    "ingest": {"source": "paths.source", "out": "paths.catalogue", "rejects_dir": "paths.report_dir",
               "berufenet_url": "berufenet_url"},
    "triplets": {"per_anchor": "triplets.per_anchor", "seed": "seed", "catalogue": "paths.catalogue",
                 "out": "paths.triplets"},
    "train": {"triplets": "paths.triplets", "out": "paths.encoder", "epochs": "encoder.epochs",
              "learning_rate": "encoder.learning_rate", "dim": "encoder.dim", "seed": "encoder.seed"},
    "index": {"encoder": "paths.encoder", "vectors": "paths.vectors", "catalogue": "paths.catalogue",
              "out": "paths.index", "M": "hnsw.M", "ef_construction": "hnsw.ef_construction",
              "ef_search": "hnsw.ef_search", "seed": "hnsw.seed"},
    "classify": {"title": "query.title", "qualification": "query.qualification", "managerial": "query.managerial"},
    "serve": {"host": "service.host", "port": "service.port"},
    "eval": {"test": "paths.test", "out": "paths.report"},
    "ablate": {"kind": "ablation", "test": "paths.test", "out": "paths.report"},
    "export-vectors": {"encoder": "paths.encoder", "catalogue": "paths.catalogue", "out": "paths.export"},
}
_MODEL = {"index": "paths.index", "encoder": "paths.encoder", "k": "k"}


def make_config(args: argparse.Namespace):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    mapping = dict(_OVERRIDES.get(args.verb, {}))
    if args.verb in ("classify", "serve", "eval", "ablate"):
        mapping.update(_MODEL)
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is None or value is False:
            continue
        cfg = cfg.override(key, value)
    if getattr(args, "ef_search", None) is not None and args.verb != "index":
        cfg = cfg.override("hnsw.ef_search", args.ef_search)
    if args.verb == "triplets" and args.scheme:
        cfg = cfg.override("triplets.schemes", tuple(dict.fromkeys(args.scheme)))
    if args.verb == "classify" and args.skills:
        cfg = cfg.override("query.skills", _skills(args.skills))
    if getattr(args, "isced_rules", None):
        cfg = cfg.override("paths.isced_rules", args.isced_rules)
    if getattr(args, "log_level", None):
        cfg = cfg.override("log_level", args.log_level)
    if getattr(args, "force", False):
        cfg = cfg.override("force", True)
    return cfg


def _print(obj: Any) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True))


def _classify_remote(args: argparse.Namespace) -> int:
    import httpx

    body: dict[str, Any] = {"title": args.title, "skills": list(_skills(args.skills)), "managerial": args.managerial}
    if args.qualification:
        body["qualification"] = args.qualification
    if args.k:
        body["k"] = args.k
    try:
        resp = httpx.post(args.server.rstrip("/") + "/classify", json=body, timeout=30.0)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach {args.server}: {exc}", file=sys.stderr)
        return 3
    if resp.status_code != 200:
        print(f"error: server returned {resp.status_code}: {resp.text}", file=sys.stderr)
        return 4 if resp.status_code < 500 else 3
    _print(resp.json())
    return 0


def _synth(args: argparse.Namespace) -> int:
    from .corpus import write_catalogue
    from .evalharness import split
    from .synthetic import SyntheticConfig, generate_catalogue

    kw: dict[str, Any] = {"seed": args.seed}
    if args.titles_per_type:
        kw["titles_per_type"] = args.titles_per_type
    if args.n_areas:
        kw["n_areas"] = args.n_areas
    records = generate_catalogue(SyntheticConfig(**kw))
    if args.limit and args.limit < len(records):
        records, _ = split(records, args.limit / len(records), args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_catalogue(records, args.out)
    _print({"records": len(records), "out": args.out})
    return 0


def _split(args: argparse.Namespace) -> int:
    from .corpus import load_catalogue, write_catalogue
    from .evalharness import split

    if not 0 < args.train_fraction < 1:
        raise ConfigInvalid("train_fraction", "must be in (0, 1)")
    cat = load_catalogue(args.catalogue)
    train, test = split(cat.records, args.train_fraction, args.seed)
    for path, recs in ((args.train_out, train), (args.test_out, test)):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_catalogue(recs, path)
    _print({"train": len(train), "test": len(test), "rejects": len(cat.rejects)})
    return 0


def _summary(result) -> Any:
    from .evalharness import EvalReport

    if isinstance(result.output, EvalReport):
        print(result.output.table(), file=sys.stderr)
        return {"artifacts": result.artifacts}
    if result.output is None:
        return {"artifacts": result.artifacts}
    if result.artifacts:
        return {"artifacts": result.artifacts, "result": result.output}
    return result.output


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (getattr(args, "log_level", None) or "INFO").upper()
    logging.basicConfig(
        level=level if level in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL") else "INFO",
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.verb == "synth":
            return _synth(args)
        if args.verb == "split":
            return _split(args)
        if args.verb == "classify" and args.server:
            return _classify_remote(args)
        from .pipeline import run_stage

        cfg = make_config(args)
        result = run_stage(args.verb, cfg)
        _print(_summary(result))
        return result.exit_code
    except OccuAlignError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
