"""Provenance headers carried by every artifact file.

JSON Lines artifacts (catalogue, triplets) may start with a
``{"_provenance": {...}}`` line that readers skip; encoder and index
snapshots keep the same dict in their JSON header; JSONL vector files in
their header line and binary vector files in a ``.prov.json`` sidecar.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

from .errors import IoFailure

KEY = "_provenance"
FORMAT_VERSION = 1


def make(stage: str, seed: int | None, config_hash: str, **extra) -> dict:
    out = {"format_version": FORMAT_VERSION, "stage": stage, "seed": seed, "config_hash": config_hash}
    out.update(extra)
    return out


def header_line(prov: dict) -> str:
    return json.dumps({KEY: prov}, sort_keys=True, ensure_ascii=False) + "\n"


def is_header(obj) -> bool:
    return isinstance(obj, dict) and KEY in obj and len(obj) == 1


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read(path: str | Path) -> dict | None:
    """Provenance dict of any artifact file, or None when it carries none."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(12)
            if head[:4] == b"OAE1":
                (clen,) = struct.unpack_from("<I", head, 8)
                return json.loads(fh.read(clen)).get("provenance")
            if head[:4] == b"OAV1":
                side = Path(str(path) + ".prov.json")
                return json.loads(side.read_text("utf-8"))["provenance"] if side.exists() else None
            if head[:4] == b"OAH1":
                from .annindex import load

                return load(path).meta.get("provenance")
            fh.seek(0)
            first = fh.readline()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        obj = json.loads(first)
    except ValueError:
        return None
    if is_header(obj):
        return obj[KEY]
    if isinstance(obj, dict) and isinstance(obj.get("provenance"), dict):
        return obj["provenance"]  # vector JSONL header line
    return None
