"""Documents, TFIDF corpora, corpus files, and synthetic corpus generators.

Corpus directory layout::

    <dir>/train.jsonl, <dir>/val.jsonl, <dir>/test.jsonl
    <dir>/vocab.json    (optional sidecar: vocabulary, idf, label names)

Each JSONL line is one document::

    {"id": "d17", "labels": ["sports"], "counts": {"game": 3, "team": 1}, "pair_id": "d18"}

``pair_id`` is optional. A document carrying a ``pair_id`` is the query side
``y`` of a predictive pair; the referenced document is its partner ``x``.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SPLITS = ("train", "val", "test")

__all__ = [
    "SPLITS",
    "Document",
    "Corpus",
    "build_tfidf",
    "save_corpus",
    "load_corpus",
    "read_raw",
    "tokenize",
    "synthetic_topics",
    "synthetic_pairs",
    "prototype_clusters",
    "load_newsgroups",
]


@dataclass(frozen=True)
class Document:
    id: str
    counts: dict[int, int]
    tfidf: dict[int, float]
    labels: frozenset[int] = frozenset()
    pair_id: str | None = None

    @property
    def empty(self) -> bool:
        return not self.tfidf


@dataclass
class Corpus:
    vocab: list[str]
    idf: np.ndarray
    label_names: list[str]
    splits: dict[str, list[Document]]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name, docs in self.splits.items():
            for d in docs:
                if d.id in seen:
                    raise ValueError(f"document id {d.id!r} appears in splits {seen[d.id]} and {name}")
                seen[d.id] = name
        for docs in self.splits.values():
            for d in docs:
                if d.pair_id is not None and d.pair_id not in seen:
                    raise ValueError(f"pair_id {d.pair_id!r} of {d.id!r} does not resolve")
        if not np.all(np.isfinite(self.idf)):
            raise ValueError("idf contains non-finite values")
        self._where = seen

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def docs(self, split: str) -> list[Document]:
        return self.splits.get(split, [])

    def get(self, doc_id: str) -> Document:
        split = self._where[doc_id]
        key = ("pos", split)
        if key not in self._cache:
            self._cache[key] = {d.id: k for k, d in enumerate(self.splits[split])}
        return self.splits[split][self._cache[key][doc_id]]

    def matrix(self, split: str) -> sp.csr_matrix:
        """``(n, V)`` CSR matrix of the split's TFIDF vectors."""
        key = ("X", split)
        if key not in self._cache:
            self._cache[key] = tfidf_matrix(self.docs(split), self.vocab_size)
        return self._cache[key]

    def label_matrix(self, split: str) -> np.ndarray:
        key = ("L", split)
        if key not in self._cache:
            docs = self.docs(split)
            out = np.zeros((len(docs), len(self.label_names)), dtype=bool)
            for k, d in enumerate(docs):
                out[k, list(d.labels)] = True
            self._cache[key] = out
        return self._cache[key]

    def has_labels(self, *splits: str) -> bool:
        return all(d.labels for s in splits for d in self.docs(s)) and any(self.docs(s) for s in splits)

    def has_pairs(self, split: str) -> bool:
        return any(d.pair_id is not None for d in self.docs(split))

    def pairs(self, split: str) -> tuple[list[Document], list[Document]]:
        """``(ys, xs)``: query-side documents of the split and their partners."""
        ys = [d for d in self.docs(split) if d.pair_id is not None]
        return ys, [self.get(d.pair_id) for d in ys]


def tfidf_matrix(docs: list[Document], vocab_size: int) -> sp.csr_matrix:
    indptr, indices, values = [0], [], []
    for d in docs:
        keys = sorted(d.tfidf)
        indices.extend(keys)
        values.extend(d.tfidf[k] for k in keys)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(docs), vocab_size),
    )


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z][a-z0-9']+", text.lower())


def _raw_counts(rec: dict) -> Counter:
    if "counts" in rec:
        return Counter({str(k): int(v) for k, v in rec["counts"].items()})
    return Counter(rec.get("tokens", []))


def _weights(counts: dict[int, int], idf: np.ndarray) -> dict[int, float]:
    w = {t: (1.0 + math.log(c)) * idf[t] for t, c in sorted(counts.items()) if c > 0}
    norm = math.sqrt(sum(v * v for v in w.values()))
    return {t: v / norm for t, v in w.items()} if norm > 0 else {}


def build_tfidf(
    raw: dict[str, list[dict]],
    vocab_size: int | None = None,
    vocab: list[str] | None = None,
    idf: np.ndarray | None = None,
    label_names: list[str] | None = None,
) -> Corpus:
    """Fit (or reuse) a vocabulary and idf on the train split and weight every split.

    Vocabulary: the ``vocab_size`` train terms with the highest document
    frequency (ties by term). Weight: ``(1 + ln tf) * (ln((1 + D) / (1 + df)) + 1)``
    followed by L2 normalisation.
    """
    train = [_raw_counts(r) for r in raw.get("train", [])]
    if vocab is None:
        df = Counter()
        for c in train:
            df.update(c.keys())
        ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))
        vocab = [t for t, _ in (ranked if vocab_size is None else ranked[:vocab_size])]
        if not vocab:
            raise ValueError("empty vocabulary: the train split has no terms")
        n_docs = len(train)
        idf = np.array([math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in vocab])
    elif idf is None:
        raise ValueError("a fixed vocabulary needs its idf vector")
    index = {t: k for k, t in enumerate(vocab)}
    if label_names is None:
        label_names = sorted({lab for recs in raw.values() for r in recs for lab in r.get("labels", [])})
    label_index = {lab: k for k, lab in enumerate(label_names)}
    splits = {}
    for name, recs in raw.items():
        docs = []
        for r in recs:
            counts = {index[t]: c for t, c in _raw_counts(r).items() if t in index}
            counts = dict(sorted(counts.items()))
            docs.append(
                Document(
                    id=str(r["id"]),
                    counts=counts,
                    tfidf=_weights(counts, idf),
                    labels=frozenset(label_index[lab] for lab in r.get("labels", [])),
                    pair_id=r.get("pair_id"),
                )
            )
        splits[name] = docs
    return Corpus(list(vocab), np.asarray(idf, dtype=np.float64), list(label_names), splits)


def _record(doc: Document, corpus: Corpus) -> dict:
    rec = {
        "id": doc.id,
        "labels": [corpus.label_names[k] for k in sorted(doc.labels)],
        "counts": {corpus.vocab[t]: c for t, c in doc.counts.items()},
    }
    if doc.pair_id is not None:
        rec["pair_id"] = doc.pair_id
    return rec


def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, docs in corpus.splits.items():
        with open(directory / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for d in docs:
                fh.write(json.dumps(_record(d, corpus), sort_keys=True) + "\n")
    sidecar = {"vocab": corpus.vocab, "idf": corpus.idf.tolist(), "labels": corpus.label_names}
    (directory / "vocab.json").write_text(json.dumps(sidecar), encoding="utf-8")


def read_raw(directory: str | Path) -> dict[str, list[dict]]:
    directory = Path(directory)
    raw = {}
    for name in SPLITS:
        path = directory / f"{name}.jsonl"
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                raw[name] = [json.loads(line) for line in fh if line.strip()]
    if not raw:
        raise FileNotFoundError(f"no split files (train/val/test .jsonl) in {directory}")
    return raw


def load_corpus(directory: str | Path, vocab_size: int | None = None) -> Corpus:
    """Read a corpus directory, reusing the sidecar vocabulary/idf when present."""
    directory = Path(directory)
    raw = read_raw(directory)
    sidecar = directory / "vocab.json"
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        return build_tfidf(raw, vocab=meta["vocab"], idf=np.asarray(meta["idf"]), label_names=meta["labels"])
    return build_tfidf(raw, vocab_size=vocab_size)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


def _zipf(n: int, exponent: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def _split_sizes(n: int, fractions: tuple[float, float, float]) -> list[int]:
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    return [n - n_val - n_test, n_val, n_test]


def synthetic_topics(
    n_topics: int = 4,
    sizes: tuple[int, int, int] = (2000, 500, 500),
    vocab_size: int = 2000,
    topic_words: int = 200,
    doc_length: int = 60,
    purity: float = 0.5,
    seed: int = 0,
) -> dict[str, list[dict]]:
    """Planted-topic documents with Zipfian topic and background vocabularies.

    Each topic owns a disjoint block of ``topic_words`` terms. A document
    picks one topic, draws a Poisson(``doc_length``) length, and emits each
    token from its topic with probability ``purity``, otherwise from a
    Zipfian background over the whole vocabulary.
    """
    if n_topics * topic_words > vocab_size:
        raise ValueError("topic blocks do not fit in the vocabulary")
    rng = np.random.default_rng(seed)
    terms = [f"w{k:05d}" for k in range(vocab_size)]
    background = _zipf(vocab_size)
    topic_dist = _zipf(topic_words)
    raw: dict[str, list[dict]] = {}
    serial = 0
    for split, n in zip(SPLITS, sizes):
        recs = []
        for _ in range(n):
            t = int(rng.integers(n_topics))
            length = max(1, int(rng.poisson(doc_length)))
            from_topic = rng.random(length) < purity
            words = np.where(
                from_topic,
                t * topic_words + rng.choice(topic_words, size=length, p=topic_dist),
                rng.choice(vocab_size, size=length, p=background),
            )
            counts = Counter(terms[w] for w in words)
            recs.append({"id": f"d{serial:06d}", "labels": [f"topic{t}"], "counts": dict(sorted(counts.items()))})
            serial += 1
        raw[split] = recs
    return raw


def synthetic_pairs(
    n_pairs: int = 5000,
    n_topics: int = 50,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    vocab_size: int = 5000,
    topic_words: int = 80,
    event_words: int = 6,
    doc_length: int = 60,
    topic_rate: float = 0.4,
    event_rate: float = 0.2,
    seed: int = 0,
) -> dict[str, list[dict]]:
    """Paired articles about a shared event.

    Each pair samples a topic and a small set of event terms from that
    topic's block; both articles emit tokens from the event terms, the topic,
    and the background with the given rates. The query side ``y`` carries
    ``pair_id`` pointing to ``x``. Both sides carry the topic label.
    """
    if n_topics * topic_words > vocab_size:
        raise ValueError("topic blocks do not fit in the vocabulary")
    rng = np.random.default_rng(seed)
    terms = [f"w{k:05d}" for k in range(vocab_size)]
    background = _zipf(vocab_size)
    topic_dist = _zipf(topic_words)

    def article(topic: int, event: np.ndarray) -> dict[str, int]:
        length = max(1, int(rng.poisson(doc_length)))
        u = rng.random(length)
        words = np.where(
            u < event_rate,
            rng.choice(event, size=length),
            np.where(
                u < event_rate + topic_rate,
                topic * topic_words + rng.choice(topic_words, size=length, p=topic_dist),
                rng.choice(vocab_size, size=length, p=background),
            ),
        )
        return dict(sorted(Counter(terms[w] for w in words).items()))

    raw: dict[str, list[dict]] = {}
    serial = 0
    for split, n in zip(SPLITS, _split_sizes(n_pairs, fractions)):
        recs = []
        for _ in range(n):
            t = int(rng.integers(n_topics))
            event = t * topic_words + rng.choice(topic_words, size=event_words, replace=False)
            xid, yid = f"p{serial:06d}x", f"p{serial:06d}y"
            recs.append({"id": xid, "labels": [f"topic{t}"], "counts": article(t, event)})
            recs.append({"id": yid, "labels": [f"topic{t}"], "counts": article(t, event), "pair_id": xid})
            serial += 1
        raw[split] = recs
    return raw


def prototype_clusters(
    n_clusters: int = 2,
    copies: tuple[int, int, int] = (50, 10, 10),
    vocab_size: int = 40,
    doc_length: int = 30,
    seed: int = 0,
) -> dict[str, list[dict]]:
    """Clusters of identical documents: each cluster repeats one prototype.

    With identical inputs an encoder can only assign codes per cluster, so
    the best achievable objective can be found by enumerating cluster-level
    code assignments.
    """
    rng = np.random.default_rng(seed)
    block = vocab_size // n_clusters
    protos = []
    for c in range(n_clusters):
        words = c * block + rng.integers(block, size=doc_length)
        protos.append(dict(sorted(Counter(f"w{w:03d}" for w in words).items())))
    raw: dict[str, list[dict]] = {}
    for split, n in zip(SPLITS, copies):
        raw[split] = [
            {"id": f"{split}-c{c}-{k:04d}", "labels": [f"cluster{c}"], "counts": protos[c]}
            for k in range(n)
            for c in range(n_clusters)
        ]
    return raw


def load_newsgroups(root: str | Path, val_fraction: float = 0.1, seed: int = 0) -> dict[str, list[dict]]:
    """Raw records from an extracted 20 Newsgroups "bydate" distribution.

    Expects ``<root>/20news-bydate-train/<group>/<file>`` and the matching
    ``-test`` tree. Headers (everything before the first blank line) are
    dropped; the validation split is a seeded sample of the train tree.
    """
    root = Path(root)

    def read_tree(tree: Path) -> list[dict]:
        if not tree.is_dir():
            raise FileNotFoundError(f"missing newsgroups directory {tree}")
        recs = []
        for group in sorted(p for p in tree.iterdir() if p.is_dir()):
            for path in sorted(group.iterdir()):
                text = path.read_text(encoding="latin-1")
                _, _, body = text.partition("\n\n")
                recs.append(
                    {
                        "id": f"{tree.name.rsplit('-', 1)[-1]}/{group.name}/{path.name}",
                        "labels": [group.name],
                        "counts": dict(sorted(Counter(tokenize(body)).items())),
                    }
                )
        return recs

    train = read_tree(root / "20news-bydate-train")
    test = read_tree(root / "20news-bydate-test")
    perm = np.random.default_rng(seed).permutation(len(train))
    n_val = int(round(len(train) * val_fraction))
    val_idx = set(perm[:n_val].tolist())
    return {
        "train": [r for k, r in enumerate(train) if k not in val_idx],
        "val": [r for k, r in enumerate(train) if k in val_idx],
        "test": test,
    }
