"""HNSW approximate nearest-neighbour index over unit vectors (cosine), with an
exhaustive oracle and a checksummed binary snapshot format.

The graph lives in flat int32 arrays so the hot loops can be compiled with
numba:

* ``adj0[n, :cnt0[n]]`` holds node ``n``'s layer-0 neighbours (at most ``M0``);
* nodes with level >= 1 own a row ``slot[n]`` in ``adj_up`` whose entry
  ``[slot, l - 1, :cnt_up[slot, l - 1]]`` lists their layer-``l`` neighbours
  (at most ``M``).

Distances are ``1 - dot`` accumulated in float64; every similarity reported to
callers comes from the same ``_dot`` routine, so HNSW and exact results agree
bit-for-bit when they retrieve the same items.
"""

from __future__ import annotations

import hashlib
import heapq
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numba
import numpy as np

from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    EmptyIndex,
    EmptyInput,
    IoFailure,
    NormViolation,
    VersionMismatch,
)

SNAPSHOT_MAGIC = b"OAH1"
SNAPSHOT_VERSION = 1
UNIT_TOL = 1e-4


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    M0: int | None = None
    ef_construction: int = 200
    ef_search: int = 64
    level_lambda: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.M0 is None:
            object.__setattr__(self, "M0", 2 * self.M)
        if self.level_lambda is None:
            object.__setattr__(self, "level_lambda", 1.0 / math.log(self.M))
        if self.M0 < self.M:
            raise ValueError("M0 must be >= M")
        if self.ef_construction < self.M:
            raise ValueError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "M0": self.M0,
            "ef_construction": self.ef_construction,
            "ef_search": self.ef_search,
            "level_lambda": self.level_lambda,
            "seed": self.seed,
        }


@dataclass
class IndexedItem:
    id: int
    key: str
    vector: np.ndarray
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Neighbor:
    id: int
    key: str
    cosine_similarity: float
    payload: dict[str, Any]


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _dot(vecs, i, q):
    s = 0.0
    for t in range(q.shape[0]):
        s += np.float64(vecs[i, t]) * np.float64(q[t])
    return s


@numba.njit(cache=True)
def _all_dots(vecs, q):
    out = np.empty(vecs.shape[0], dtype=np.float64)
    for i in range(vecs.shape[0]):
        out[i] = _dot(vecs, i, q)
    return out


@numba.njit(cache=True)
def _subset_dots(vecs, ids, q):
    out = np.empty(ids.shape[0], dtype=np.float64)
    for j in range(ids.shape[0]):
        out[j] = _dot(vecs, ids[j], q)
    return out


@numba.njit(cache=True)
def _neighbours(node, layer, adj0, cnt0, slot, adj_up, cnt_up):
    if layer == 0:
        return adj0[node, : cnt0[node]]
    s = slot[node]
    return adj_up[s, layer - 1, : cnt_up[s, layer - 1]]


@numba.njit(cache=True)
def _search_layer(q, eps, ef, layer, vecs, adj0, cnt0, slot, adj_up, cnt_up, visited, stamp):
    """Best-first search on one layer; returns (dists, ids) sorted ascending
    by (distance, id)."""
    stamp[0] += 1
    mark = stamp[0]
    cand = [(0.0, np.int64(0))]
    cand.pop()
    res = [(0.0, np.int64(0))]
    res.pop()
    for k in range(eps.shape[0]):
        e = np.int64(eps[k])
        if visited[e] == mark:
            continue
        visited[e] = mark
        d = 1.0 - _dot(vecs, e, q)
        heapq.heappush(cand, (d, e))
        heapq.heappush(res, (-d, -e))
        if len(res) > ef:
            heapq.heappop(res)
    while len(cand) > 0:
        dc, c = heapq.heappop(cand)
        wd = -res[0][0]
        wi = -res[0][1]
        if dc > wd or (dc == wd and c > wi):
            break
        nb = _neighbours(c, layer, adj0, cnt0, slot, adj_up, cnt_up)
        for t in range(nb.shape[0]):
            e = np.int64(nb[t])
            if visited[e] == mark:
                continue
            visited[e] = mark
            d = 1.0 - _dot(vecs, e, q)
            wd = -res[0][0]
            wi = -res[0][1]
            if len(res) < ef or d < wd or (d == wd and e < wi):
                heapq.heappush(cand, (d, e))
                heapq.heappush(res, (-d, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    n = len(res)
    dists = np.empty(n, dtype=np.float64)
    ids = np.empty(n, dtype=np.int64)
    for k in range(n - 1, -1, -1):
        nd, ni = heapq.heappop(res)
        dists[k] = -nd
        ids[k] = -ni
    return dists, ids


@numba.njit(cache=True)
def _select_heuristic(dists, ids, cap, vecs):
    """Keep a candidate only if it is closer to the base than to every
    already-kept neighbour. Candidates must be sorted by (distance, id)."""
    out = np.empty(cap, dtype=np.int64)
    n_out = 0
    for k in range(ids.shape[0]):
        if n_out >= cap:
            break
        c = ids[k]
        good = True
        for r in range(n_out):
            if 1.0 - _dot(vecs, out[r], vecs[c]) < dists[k]:
                good = False
                break
        if good:
            out[n_out] = c
            n_out += 1
    return out[:n_out]


@numba.njit(cache=True)
def _sort_pairs(dists, ids):
    order = np.argsort(ids, kind="mergesort")
    d2 = dists[order]
    i2 = ids[order]
    order2 = np.argsort(d2, kind="mergesort")
    return d2[order2], i2[order2]


@numba.njit(cache=True)
def _set_neighbours(node, layer, new, adj0, cnt0, slot, adj_up, cnt_up):
    if layer == 0:
        for t in range(new.shape[0]):
            adj0[node, t] = new[t]
        cnt0[node] = new.shape[0]
    else:
        s = slot[node]
        for t in range(new.shape[0]):
            adj_up[s, layer - 1, t] = new[t]
        cnt_up[s, layer - 1] = new.shape[0]


@numba.njit(cache=True)
def _build(vecs, levels, M, M0, ef_c, adj0, cnt0, slot, adj_up, cnt_up):
    n = vecs.shape[0]
    visited = np.zeros(n, dtype=np.int64)
    stamp = np.zeros(1, dtype=np.int64)
    entry = 0
    max_level = levels[0]
    for q in range(1, n):
        lq = levels[q]
        qv = vecs[q]
        eps = np.array([entry], dtype=np.int64)
        for lc in range(max_level, lq, -1):
            _, ids = _search_layer(qv, eps, 1, lc, vecs, adj0, cnt0, slot, adj_up, cnt_up, visited, stamp)
            eps = ids[:1].copy()
        for lc in range(min(max_level, lq), -1, -1):
            dists, ids = _search_layer(qv, eps, ef_c, lc, vecs, adj0, cnt0, slot, adj_up, cnt_up, visited, stamp)
            chosen = _select_heuristic(dists, ids, M, vecs)
            _set_neighbours(q, lc, chosen, adj0, cnt0, slot, adj_up, cnt_up)
            cap = M0 if lc == 0 else M
            for t in range(chosen.shape[0]):
                e = chosen[t]
                cur = _neighbours(e, lc, adj0, cnt0, slot, adj_up, cnt_up)
                m = cur.shape[0]
                if m < cap:
                    if lc == 0:
                        adj0[e, m] = q
                        cnt0[e] = m + 1
                    else:
                        s = slot[e]
                        adj_up[s, lc - 1, m] = q
                        cnt_up[s, lc - 1] = m + 1
                    continue
                cids = np.empty(m + 1, dtype=np.int64)
                cd = np.empty(m + 1, dtype=np.float64)
                for u in range(m):
                    cids[u] = cur[u]
                    cd[u] = 1.0 - _dot(vecs, cur[u], vecs[e])
                cids[m] = q
                cd[m] = 1.0 - _dot(vecs, q, vecs[e])
                cd, cids = _sort_pairs(cd, cids)
                pruned = _select_heuristic(cd, cids, cap, vecs)
                _set_neighbours(e, lc, pruned, adj0, cnt0, slot, adj_up, cnt_up)
            eps = ids
        if lq > max_level:
            max_level = lq
            entry = q
    return entry, max_level


@numba.njit(cache=True)
def _search(q, k, ef, entry, max_level, vecs, adj0, cnt0, slot, adj_up, cnt_up, visited, stamp):
    eps = np.array([entry], dtype=np.int64)
    for lc in range(max_level, 0, -1):
        _, ids = _search_layer(q, eps, 1, lc, vecs, adj0, cnt0, slot, adj_up, cnt_up, visited, stamp)
        eps = ids[:1]
    _, ids = _search_layer(q, eps, max(ef, k), 0, vecs, adj0, cnt0, slot, adj_up, cnt_up, visited, stamp)
    return ids


# --------------------------------------------------------------------------
# python surface
# --------------------------------------------------------------------------


def _rank(ids: np.ndarray, sims: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((ids, -sims))[:k]
    return ids[order], sims[order]


def _as_query(query, dim: int) -> np.ndarray:
    q = np.ascontiguousarray(query, dtype=np.float32).ravel()
    if q.shape[0] != dim:
        raise DimensionMismatch(f"query dim {q.shape[0]} != index dim {dim}")
    return q


def _stack_items(items: Sequence[IndexedItem]) -> tuple[list[IndexedItem], np.ndarray]:
    if not items:
        raise EmptyInput("cannot index zero items")
    items = sorted(items, key=lambda it: it.id)
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise ValueError("item ids must be unique")
    dim = np.asarray(items[0].vector).shape[-1]
    for it in items:
        if np.asarray(it.vector).shape != (dim,):
            raise DimensionMismatch(f"item {it.id} has shape {np.asarray(it.vector).shape}, expected ({dim},)")
    vecs = np.ascontiguousarray(np.stack([np.asarray(it.vector, dtype=np.float32) for it in items]))
    if not np.all(np.isfinite(vecs)):
        raise NormViolation("item vectors contain NaN/Inf")
    err = np.max(np.abs(np.linalg.norm(vecs.astype(np.float64), axis=1) - 1.0))
    if err > UNIT_TOL:
        raise NormViolation(f"item vectors are not unit-norm (max deviation {err:.2e})")
    return items, vecs


def exact_search(items: Sequence[IndexedItem] | "HnswIndex", query, k: int) -> list[Neighbor]:
    """Exhaustive top-k under the same ordering contract as HNSW search."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(items, HnswIndex):
        return items.exact(query, k)
    if not items:
        raise EmptyIndex("no items to search")
    items, vecs = _stack_items(items)
    q = _as_query(query, vecs.shape[1])
    sims = _all_dots(vecs, q)
    order, s = _rank(np.arange(len(items)), sims, k)
    return [Neighbor(items[i].id, items[i].key, float(v), items[i].payload) for i, v in zip(order, s)]


class HnswIndex:
    """Immutable after :func:`build`; searches may run concurrently (each
    call allocates its own visited buffer)."""

    def __init__(self, params, keys, ids, payloads, vecs, levels, adj0, cnt0, slot, adj_up, cnt_up, entry, max_level, meta=None):
        self.params = params
        self.keys = keys
        self.ids = ids
        self.payloads = payloads
        self.vecs = vecs
        self.levels = levels
        self.adj0, self.cnt0 = adj0, cnt0
        self.slot, self.adj_up, self.cnt_up = slot, adj_up, cnt_up
        self.entry = int(entry)
        self.max_level = int(max_level)
        self.meta: dict[str, Any] = meta or {}

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.vecs.shape[1]

    def _neighbor(self, node: int, sim: float) -> Neighbor:
        return Neighbor(int(self.ids[node]), self.keys[node], float(sim), self.payloads[node])

    def search(self, query, k: int = 10, ef_search: int | None = None) -> list[Neighbor]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if len(self) == 0:
            raise EmptyIndex("index is empty")
        q = _as_query(query, self.dim)
        ef = self.params.ef_search if ef_search is None else ef_search
        visited = np.zeros(len(self), dtype=np.int64)
        stamp = np.zeros(1, dtype=np.int64)
        found = _search(q, k, ef, self.entry, self.max_level, self.vecs, self.adj0, self.cnt0,
                        self.slot, self.adj_up, self.cnt_up, visited, stamp)
        sims = _subset_dots(self.vecs, found, q)
        nodes, s = _rank(found, sims, k)
        return [self._neighbor(n, v) for n, v in zip(nodes, s)]

    def exact(self, query, k: int = 10) -> list[Neighbor]:
        if len(self) == 0:
            raise EmptyIndex("index is empty")
        q = _as_query(query, self.dim)
        sims = _all_dots(self.vecs, q)
        nodes, s = _rank(np.arange(len(self)), sims, k)
        return [self._neighbor(n, v) for n, v in zip(nodes, s)]

    def neighbours(self, node: int, layer: int) -> np.ndarray:
        return _neighbours(node, layer, self.adj0, self.cnt0, self.slot, self.adj_up, self.cnt_up).copy()

    def audit(self) -> list[str]:
        """Full-graph check of degree bounds and adjacency sanity; returns
        a list of violations (empty when healthy)."""
        problems = []
        n = len(self)
        for node in range(n):
            for layer in range(int(self.levels[node]) + 1):
                nb = self.neighbours(node, layer)
                cap = self.params.M0 if layer == 0 else self.params.M
                if len(nb) > cap:
                    problems.append(f"node {node} layer {layer}: degree {len(nb)} > {cap}")
                if len(set(nb.tolist())) != len(nb):
                    problems.append(f"node {node} layer {layer}: duplicate edges")
                if node in nb:
                    problems.append(f"node {node} layer {layer}: self loop")
                for m in nb:
                    if not 0 <= m < n or self.levels[m] < layer:
                        problems.append(f"node {node} layer {layer}: edge to {m} absent from layer")
        return problems

    def graph_digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.levels, self.adj0, self.cnt0, self.slot, self.adj_up, self.cnt_up):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(struct.pack("<qq", self.entry, self.max_level))
        return h.hexdigest()

    # ------------------------------------------------------------------
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(SNAPSHOT_MAGIC)
        buf.write(struct.pack("<I", SNAPSHOT_VERSION))
        head = json.dumps({"params": self.params.to_json(), "meta": self.meta}, sort_keys=True).encode()
        buf.write(struct.pack("<I", len(head)) + head)
        n, d = self.vecs.shape
        n_up, max_lv, m = self.adj_up.shape
        buf.write(struct.pack("<QIIIiq", n, d, n_up, max_lv, self.max_level, self.entry))
        for node in range(n):
            kb = self.keys[node].encode("utf-8")
            pb = json.dumps(self.payloads[node], sort_keys=True, ensure_ascii=False).encode("utf-8")
            buf.write(struct.pack("<qII", int(self.ids[node]), len(kb), len(pb)) + kb + pb)
        buf.write(self.vecs.astype("<f4").tobytes())
        buf.write(self.levels.astype("<i4").tobytes())
        buf.write(self.cnt0.astype("<i4").tobytes())
        buf.write(self.adj0.astype("<i4").tobytes())
        buf.write(self.slot.astype("<i4").tobytes())
        buf.write(self.cnt_up.astype("<i4").tobytes())
        buf.write(self.adj_up.astype("<i4").tobytes())
        body = buf.getvalue()
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HnswIndex":
        if blob[:4] != SNAPSHOT_MAGIC:
            raise VersionMismatch(f"not an index snapshot (magic {blob[:4]!r})")
        if len(blob) < 40 or hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
            raise ChecksumMismatch("index snapshot is corrupt or truncated")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != SNAPSHOT_VERSION:
            raise VersionMismatch(f"unsupported index snapshot version {version}")
        (hlen,) = struct.unpack_from("<I", blob, 8)
        head = json.loads(blob[12 : 12 + hlen])
        off = 12 + hlen
        n, d, n_up, max_lv, max_level, entry = struct.unpack_from("<QIIIiq", blob, off)
        off += struct.calcsize("<QIIIiq")
        ids = np.empty(n, dtype=np.int64)
        keys, payloads = [], []
        for node in range(n):
            ids[node], klen, plen = struct.unpack_from("<qII", blob, off)
            off += 16
            keys.append(blob[off : off + klen].decode("utf-8"))
            off += klen
            payloads.append(json.loads(blob[off : off + plen]))
            off += plen

        def take(dtype, count, shape):
            nonlocal off
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape)
            off += arr.nbytes
            return arr.astype(dtype[1:] if dtype.startswith("<") else dtype)

        m0 = head["params"]["M0"]
        m = head["params"]["M"]
        vecs = np.ascontiguousarray(take("<f4", n * d, (n, d)))
        levels = take("<i4", n, (n,))
        cnt0 = take("<i4", n, (n,))
        adj0 = take("<i4", n * m0, (n, m0))
        slot = take("<i4", n, (n,))
        cnt_up = take("<i4", n_up * max_lv, (n_up, max_lv))
        adj_up = take("<i4", n_up * max_lv * m, (n_up, max_lv, m))
        params = HnswParams(**head["params"])
        return cls(params, keys, ids, payloads, vecs, levels, adj0, cnt0, slot, adj_up, cnt_up,
                   entry, max_level, head.get("meta"))

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as exc:
            raise IoFailure(f"cannot write index snapshot {path}: {exc}") from exc


def load(path: str | Path) -> HnswIndex:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read index snapshot {path}: {exc}") from exc
    return HnswIndex.from_bytes(blob)


def save(index: HnswIndex, path: str | Path) -> None:
    index.save(path)


def assign_levels(n: int, params: HnswParams) -> np.ndarray:
    u = np.random.default_rng(np.random.SeedSequence([params.seed, 0x4E5])).random(n)
    return np.floor(-np.log1p(-u) * params.level_lambda).astype(np.int32)


def build(items: Sequence[IndexedItem], params: HnswParams | None = None, meta: dict | None = None) -> HnswIndex:
    params = params or HnswParams()
    items, vecs = _stack_items(items)
    n = len(items)
    levels = assign_levels(n, params)
    max_lv = int(levels.max())
    up_nodes = np.flatnonzero(levels > 0)
    slot = np.full(n, -1, dtype=np.int32)
    slot[up_nodes] = np.arange(len(up_nodes), dtype=np.int32)
    adj0 = np.zeros((n, params.M0), dtype=np.int32)
    cnt0 = np.zeros(n, dtype=np.int32)
    adj_up = np.zeros((len(up_nodes), max_lv, params.M), dtype=np.int32)
    cnt_up = np.zeros((len(up_nodes), max_lv), dtype=np.int32)
    entry, max_level = _build(vecs, levels, params.M, params.M0, params.ef_construction,
                              adj0, cnt0, slot, adj_up, cnt_up)
    return HnswIndex(
        params,
        [it.key for it in items],
        np.array([it.id for it in items], dtype=np.int64),
        [it.payload for it in items],
        vecs, levels, adj0, cnt0, slot, adj_up, cnt_up, entry, max_level, meta,
    )


def search(index: HnswIndex, query, k: int = 10, ef_search: int | None = None) -> list[Neighbor]:
    return index.search(query, k, ef_search)
