import json
import math

import numpy as np
import pytest

from ammi.corpus import (
    Corpus,
    Document,
    build_tfidf,
    load_corpus,
    load_newsgroups,
    prototype_clusters,
    read_raw,
    save_corpus,
    synthetic_pairs,
    synthetic_topics,
    tokenize,
)

TOY = {
    "train": [
        {"id": "d1", "labels": ["x"], "counts": {"a": 2, "b": 1}},
        {"id": "d2", "labels": ["y"], "counts": {"a": 1, "c": 3}},
        {"id": "d3", "labels": ["x", "y"], "counts": {"b": 1}},
    ],
    "test": [{"id": "t1", "labels": ["x"], "counts": {"c": 1, "zzz": 4}}],
}


def test_single_repeated_term_normalises_to_one():
    c = build_tfidf({"train": [{"id": "a", "counts": {"w": 7}}]})
    assert c.docs("train")[0].tfidf == {0: 1.0}


def test_toy_corpus_hand_computed_weights():
    c = build_tfidf(TOY)
    # df: a=2, b=2, c=1 over D=3 -> vocabulary ordered by (-df, term)
    assert c.vocab == ["a", "b", "c"]
    # idf = ln((1 + D) / (1 + df)) + 1
    np.testing.assert_allclose(c.idf, [1.2876820724517808, 1.2876820724517808, 1.6931471805599454], rtol=0, atol=1e-15)
    d1, d2, d3 = c.docs("train")
    # d1: a -> (1 + ln 2) * idf_a, b -> idf_b, then L2-normalised
    assert d1.tfidf[0] == pytest.approx(0.8610369959439763, abs=1e-10)
    assert d1.tfidf[1] == pytest.approx(0.5085423203783267, abs=1e-10)
    # d2: a -> idf_a, c -> (1 + ln 3) * idf_c
    assert d2.tfidf[0] == pytest.approx(0.3407117433703762, abs=1e-10)
    assert d2.tfidf[2] == pytest.approx(0.9401678083882254, abs=1e-10)
    assert d3.tfidf == {1: 1.0}
    # test split reuses the train idf; out-of-vocabulary terms are dropped
    assert c.docs("test")[0].tfidf == {2: 1.0}


def test_term_in_every_document_gets_minimal_idf():
    raw = {"train": [{"id": str(k), "counts": {"common": 1, f"t{k}": 1}} for k in range(5)]}
    c = build_tfidf(raw)
    k = c.vocab.index("common")
    assert c.idf[k] == pytest.approx(1.0)
    assert c.idf[k] == c.idf.min()


def test_norms_labels_and_determinism():
    raw = synthetic_topics(sizes=(50, 10, 10), vocab_size=300, topic_words=50, seed=3)
    a, b = build_tfidf(raw, vocab_size=200), build_tfidf(raw, vocab_size=200)
    assert a.vocab_size == 200
    for split in ("train", "val", "test"):
        for da, db in zip(a.docs(split), b.docs(split)):
            assert da.tfidf == db.tfidf
            if not da.empty:
                assert math.sqrt(sum(v * v for v in da.tfidf.values())) == pytest.approx(1.0, abs=1e-9)
            assert all(0 <= t < 200 for t in da.tfidf)
    assert a.has_labels("train", "val", "test")
    assert a.label_matrix("test").sum(axis=1).min() == 1


def test_empty_vocabulary_rejected():
    with pytest.raises(ValueError):
        build_tfidf({"train": [{"id": "a", "counts": {}}]})


def test_split_ids_must_be_disjoint_and_pairs_resolve():
    doc = Document("x", {}, {})
    with pytest.raises(ValueError):
        Corpus(["w"], np.ones(1), [], {"train": [doc], "test": [doc]})
    with pytest.raises(ValueError):
        Corpus(["w"], np.ones(1), [], {"train": [Document("y", {}, {}, pair_id="nope")]})


def test_save_and_load_round_trip(tmp_path):
    c = build_tfidf(synthetic_pairs(n_pairs=40, n_topics=4, vocab_size=400, seed=1), vocab_size=300)
    save_corpus(c, tmp_path)
    back = load_corpus(tmp_path)
    assert back.vocab == c.vocab
    np.testing.assert_array_equal(back.idf, c.idf)
    for split in ("train", "val", "test"):
        assert [d.id for d in back.docs(split)] == [d.id for d in c.docs(split)]
        assert [d.tfidf for d in back.docs(split)] == [d.tfidf for d in c.docs(split)]
        assert [d.pair_id for d in back.docs(split)] == [d.pair_id for d in c.docs(split)]
    line = json.loads((tmp_path / "train.jsonl").read_text().splitlines()[1])
    assert set(line) == {"id", "labels", "counts", "pair_id"}


def test_read_raw_requires_split_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_raw(tmp_path)


def test_synthetic_pairs_structure():
    c = build_tfidf(synthetic_pairs(n_pairs=100, n_topics=5, vocab_size=500, seed=2))
    ys, xs = c.pairs("train")
    assert len(ys) == 80 and len(c.docs("train")) == 160
    assert all(y.pair_id == x.id for y, x in zip(ys, xs))
    assert all(y.labels == x.labels for y, x in zip(ys, xs))
    assert c.has_pairs("val") and c.has_pairs("test")


def test_synthetic_topics_is_seeded():
    assert synthetic_topics(sizes=(5, 2, 2), seed=4) == synthetic_topics(sizes=(5, 2, 2), seed=4)
    assert synthetic_topics(sizes=(5, 2, 2), seed=4) != synthetic_topics(sizes=(5, 2, 2), seed=5)


def test_prototype_clusters_are_identical_within_cluster():
    c = build_tfidf(prototype_clusters(n_clusters=3, copies=(4, 2, 2)))
    by_label = {}
    for d in c.docs("train"):
        by_label.setdefault(d.labels, set()).add(tuple(sorted(d.tfidf.items())))
    assert len(by_label) == 3 and all(len(v) == 1 for v in by_label.values())


def test_tokenize():
    assert tokenize("Hello, World! it's 2 GO x") == ["hello", "world", "it's", "go"]


def test_newsgroups_loader(tmp_path):
    for part in ("train", "test"):
        for group in ("sci.space", "rec.autos"):
            d = tmp_path / f"20news-bydate-{part}" / group
            d.mkdir(parents=True)
            for k in range(3):
                (d / str(k)).write_text(f"From: someone\nSubject: hi\n\nthe {group} body text {k}\n")
    raw = load_newsgroups(tmp_path, val_fraction=1 / 3, seed=0)
    assert len(raw["train"]) == 4 and len(raw["val"]) == 2 and len(raw["test"]) == 6
    assert all("from" not in r["counts"] for r in raw["train"])
    with pytest.raises(FileNotFoundError):
        load_newsgroups(tmp_path / "missing")
