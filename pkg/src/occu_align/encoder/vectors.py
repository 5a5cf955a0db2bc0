"""Vector files: ``OAV1`` binary layout and a JSON Lines debug variant.

Binary layout (little-endian)::

    b"OAV1" | dim: u32 | count: u64 | count x (key_len: u32 | key utf-8 | dim x f32)

The layout has no room for metadata, so a provenance dict, when given, goes
to a ``<file>.prov.json`` sidecar; the JSON Lines variant keeps it in its
header line.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import HeaderMismatch, IoFailure, UnknownText, VersionMismatch

MAGIC = b"OAV1"


def _is_jsonl(path: Path) -> bool:
    return path.suffix in (".jsonl", ".json")


def write_vectors(path: str | Path, keys: Sequence[str], vectors: np.ndarray, prov: dict | None = None) -> None:
    path = Path(path)
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or len(keys) != vectors.shape[0]:
        raise ValueError("need one vector row per key")
    count, dim = vectors.shape
    if _is_jsonl(path):
        with open(path, "w", encoding="utf-8") as fh:
            head = {"dim": dim, "count": count}
            if prov is not None:
                head["provenance"] = prov
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for k, v in zip(keys, vectors):
                fh.write(json.dumps({"key": k, "vector": [float(x) for x in v]}, ensure_ascii=False) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", dim, count))
        for k, v in zip(keys, vectors):
            kb = k.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)) + kb + v.astype("<f4").tobytes())
    if prov is not None:
        sidecar(path).write_text(json.dumps({"provenance": prov}, indent=2, sort_keys=True) + "\n", "utf-8")


def sidecar(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".prov.json")


def read_vectors(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read vector file {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        if blob[:1] == b"{":
            return _read_jsonl(blob, path)
        raise VersionMismatch(f"{path}: unknown vector file magic {blob[:4]!r}")
    if len(blob) < 16:
        raise HeaderMismatch(f"{path}: truncated header")
    dim, count = struct.unpack_from("<IQ", blob, 4)
    off = 16
    keys: list[str] = []
    vecs = np.empty((count, dim), dtype=np.float32)
    step = 4 * dim
    for i in range(count):
        if off + 4 > len(blob):
            raise HeaderMismatch(f"{path}: file ends after {i} of {count} records")
        (klen,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + klen + step > len(blob):
            raise HeaderMismatch(f"{path}: record {i} shorter than header dim {dim}")
        try:
            keys.append(blob[off : off + klen].decode("utf-8"))
        except UnicodeDecodeError:
            raise HeaderMismatch(f"{path}: record {i} key is not UTF-8 (payload misaligned?)") from None
        off += klen
        vecs[i] = np.frombuffer(blob, dtype="<f4", count=dim, offset=off)
        off += step
    if off != len(blob):
        raise HeaderMismatch(f"{path}: {len(blob) - off} trailing bytes; payload does not match header dim {dim}")
    return keys, vecs


def _read_jsonl(blob: bytes, path: Path) -> tuple[list[str], np.ndarray]:
    lines = [l for l in blob.decode("utf-8").splitlines() if l.strip()]
    header = json.loads(lines[0])
    dim, count = int(header["dim"]), int(header["count"])
    if len(lines) - 1 != count:
        raise HeaderMismatch(f"{path}: header count {count}, found {len(lines) - 1} records")
    keys, rows = [], []
    for line in lines[1:]:
        rec = json.loads(line)
        if len(rec["vector"]) != dim:
            raise HeaderMismatch(f"{path}: vector length {len(rec['vector'])} != header dim {dim}")
        keys.append(rec["key"])
        rows.append(rec["vector"])
    return keys, np.asarray(rows, dtype=np.float32).reshape(count, dim)


class PrecomputedProvider:
    """Answers ``embed`` by exact key lookup in a vector file."""

    def __init__(self, keys: Iterable[str], vectors: np.ndarray, name: str = "precomputed"):
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.lookup = {k: i for i, k in enumerate(keys)}
        self.name = name

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.vectors[self.lookup[text]]
        except KeyError:
            raise UnknownText(f"no precomputed vector for {text!r}") from None

    def dim(self) -> int:
        return self.vectors.shape[1]

    def id(self) -> str:
        return self.name


def load_precomputed(path: str | Path) -> PrecomputedProvider:
    keys, vecs = read_vectors(path)
    return PrecomputedProvider(keys, vecs, name=f"precomputed:{Path(path).name}")
