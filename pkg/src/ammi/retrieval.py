"""Bit-packed Hamming retrieval and the evaluation measures built on it.

Neighbours are ranked by ``(Hamming distance, document id)``, so results do
not depend on the order in which documents were indexed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .markov import BitVector, pack_bits, unpack_bits

__all__ = [
    "CodeIndex",
    "hamming",
    "hamming_matrix",
    "nearest",
    "top_k_precision",
    "pair_matching_precision",
    "count_distinct_codes",
    "bit_usage",
    "DriftRow",
    "drift_report",
    "format_drift",
    "write_codes",
    "read_codes",
]

_CHUNK = 256


@dataclass
class CodeIndex:
    """Packed codes for a list of documents."""

    ids: list[str]
    packed: np.ndarray
    m: int
    _rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.packed = np.ascontiguousarray(self.packed, dtype=np.uint64)
        if self.packed.shape != (len(self.ids), (self.m + 63) // 64):
            raise ValueError(f"packed shape {self.packed.shape} inconsistent with {len(self.ids)} ids and m={self.m}")
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._rank = np.empty(len(self.ids), dtype=np.int64)
        self._rank[order] = np.arange(len(self.ids))

    @classmethod
    def from_bits(cls, ids, bits: np.ndarray) -> "CodeIndex":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(list(ids), pack_bits(bits), bits.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def bits(self) -> np.ndarray:
        return unpack_bits(self.packed, self.m)

    def code(self, k: int) -> BitVector:
        return BitVector.from_packed(self.packed[k], self.m)

    def buckets(self) -> dict[bytes, list[str]]:
        """Document ids grouped by identical code."""
        out: dict[bytes, list[str]] = {}
        for doc_id, row in zip(self.ids, self.packed):
            out.setdefault(row.tobytes(), []).append(doc_id)
        return out


def hamming(a: BitVector, b: BitVector) -> int:
    if a.m != b.m:
        raise ValueError(f"code lengths differ: {a.m} vs {b.m}")
    return int(np.bitwise_count(a.packed ^ b.packed).sum())


def hamming_matrix(queries: np.ndarray, index: np.ndarray) -> np.ndarray:
    """``(Q, n)`` distances between packed query rows and packed index rows."""
    queries = np.asarray(queries, dtype=np.uint64)
    out = np.empty((queries.shape[0], index.shape[0]), dtype=np.int64)
    for s in range(0, queries.shape[0], _CHUNK):
        block = queries[s : s + _CHUNK, None, :] ^ index[None, :, :]
        out[s : s + _CHUNK] = np.bitwise_count(block).sum(axis=-1)
    return out


def nearest(queries: np.ndarray, index: CodeIndex, k: int, exclude_ids: list[str] | None = None) -> np.ndarray:
    """Row ``q``: positions in ``index`` of the ``k`` nearest entries to packed query ``q``.

    ``exclude_ids[q]``, when given, is removed from query ``q``'s candidates
    (used when queries are themselves indexed).
    """
    n = len(index)
    limit = n - (1 if exclude_ids is not None else 0)
    if k > limit or k < 1:
        raise ValueError(f"K={k} is outside [1, {limit}] for an index of {n} documents")
    pos = {d: p for p, d in enumerate(index.ids)} if exclude_ids is not None else {}
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for s in range(0, queries.shape[0], _CHUNK):
        dist = hamming_matrix(queries[s : s + _CHUNK], index.packed)
        key = dist * n + index._rank[None, :]
        if exclude_ids is not None:
            for r, q in enumerate(range(s, min(s + _CHUNK, queries.shape[0]))):
                p = pos.get(exclude_ids[q])
                if p is not None:
                    key[r, p] = np.iinfo(np.int64).max
        part = np.argpartition(key, k - 1, axis=1)[:, :k]
        order = np.argsort(np.take_along_axis(key, part, axis=1), axis=1)
        out[s : s + _CHUNK] = np.take_along_axis(part, order, axis=1)
    return out


def top_k_precision(
    query_packed: np.ndarray,
    query_labels: np.ndarray,
    index: CodeIndex,
    index_labels: np.ndarray,
    k: int = 100,
    query_ids: list[str] | None = None,
) -> float:
    """Mean fraction of each query's ``k`` nearest documents sharing at least one label.

    Labels are boolean ``(n, L)`` matrices. Passing ``query_ids`` excludes a
    query from its own neighbour list when it is also indexed.
    """
    index_labels = np.asarray(index_labels, dtype=bool)
    if not index_labels.any(axis=1).all():
        raise ValueError("every indexed document needs at least one label")
    exclude = query_ids if query_ids is not None and set(query_ids) & set(index.ids) else None
    nn = nearest(query_packed, index, k, exclude)
    hits = (np.asarray(query_labels, dtype=bool)[:, None, :] & index_labels[nn]).any(axis=-1)
    return float(hits.mean(axis=1).mean())


def pair_matching_precision(
    query_packed: np.ndarray, query_pair_ids: list[str], index: CodeIndex, k: int = 100
) -> float:
    """Fraction of queries whose partner document is among their ``k`` nearest."""
    pos = {d: p for p, d in enumerate(index.ids)}
    missing = [pid for pid in query_pair_ids if pid not in pos]
    if missing:
        raise ValueError(f"{len(missing)} pair ids do not resolve in the index, e.g. {missing[0]!r}")
    nn = nearest(query_packed, index, k)
    target = np.array([pos[pid] for pid in query_pair_ids])
    return float((nn == target[:, None]).any(axis=1).mean())


def count_distinct_codes(codes) -> int:
    """Number of unique codes; accepts a :class:`CodeIndex` or a 2-D packed/bit array."""
    arr = codes.packed if isinstance(codes, CodeIndex) else np.asarray(codes)
    if arr.shape[0] == 0:
        return 0
    return int(np.unique(arr, axis=0).shape[0])


def bit_usage(bits: np.ndarray) -> np.ndarray:
    """Fraction of documents with each bit set."""
    return np.asarray(bits, dtype=np.float64).mean(axis=0)


@dataclass(frozen=True)
class DriftRow:
    threshold: int
    doc_id: str | None
    distance: int | None


def drift_report(query: BitVector, index: CodeIndex, thresholds, exclude_id: str | None = None) -> list[DriftRow]:
    """For each threshold ``d``, the nearest indexed document at Hamming distance >= ``d``."""
    if len(index) == 0:
        raise ValueError("the index is empty")
    if query.m != index.m:
        raise ValueError("query and index code lengths differ")
    dist = hamming_matrix(query.packed[None, :], index.packed)[0]
    key = dist * len(index) + index._rank
    rows = []
    for d in thresholds:
        if d > index.m or d < 0:
            raise ValueError(f"threshold {d} outside [0, m={index.m}]")
        ok = dist >= d
        if exclude_id is not None:
            ok &= np.array([i != exclude_id for i in index.ids])
        if not ok.any():
            rows.append(DriftRow(int(d), None, None))
            continue
        best = int(np.argmin(np.where(ok, key, np.iinfo(np.int64).max)))
        rows.append(DriftRow(int(d), index.ids[best], int(dist[best])))
    return rows


def format_drift(query_id: str, rows: list[DriftRow], as_json: bool = False) -> str:
    if as_json:
        return json.dumps(
            {"query": query_id, "rows": [r.__dict__ for r in rows]}, indent=2, sort_keys=True
        )
    lines = [f"query: {query_id}", "threshold\tdistance\tdocument"]
    for r in rows:
        lines.append(f">={r.threshold}\t{'-' if r.distance is None else r.distance}\t{r.doc_id or '(none)'}")
    return "\n".join(lines) + "\n"


def write_codes(path: str | Path, ids, bits: np.ndarray) -> None:
    """One ``id<TAB>hex`` line per document; hex is the MSB-first packed byte string."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, row in zip(ids, np.asarray(bits, dtype=np.uint8)):
            fh.write(f"{doc_id}\t{np.packbits(row).tobytes().hex()}\n")


def read_codes(path: str | Path, m: int) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc_id, text = line.rstrip("\n").split("\t")
            ids.append(doc_id)
            rows.append(BitVector.from_hex(text, m).bits)
    return ids, np.array(rows, dtype=np.uint8).reshape(len(ids), m)
