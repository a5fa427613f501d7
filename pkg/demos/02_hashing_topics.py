# %% [markdown]
# Learning 16-bit codes for a synthetic topic corpus
#
# Four topics, 2000/500/500 train/val/test documents. We train the
# adversarial objective (a learned prior upper-bounds the code entropy) and
# the brute-force objective (exact entropy of the batch mixture), then look at
# retrieval precision, how many distinct codes each uses and a drift report.

# %%
import time

import numpy as np

from ammi.corpus import build_tfidf, synthetic_topics
from ammi.markov import BitVector
from ammi.model import HashingModel, encode_matrix
from ammi.retrieval import CodeIndex, drift_report, format_drift
from ammi.training import Hyperparams, evaluate, train_ammi, train_bmmi

corpus = build_tfidf(synthetic_topics(seed=0))
print("vocabulary", corpus.vocab_size, "| splits", {s: len(corpus.docs(s)) for s in corpus.splits})

# %% [markdown]
# An untrained encoder is already above the 1-in-4 chance level: a random
# projection of TF-IDF vectors keeps part of the topic structure.

# %%
untrained = HashingModel.build(corpus.vocab_size, 16, seed=0)
print("untrained top-100 precision", round(evaluate(untrained, corpus)["precision"], 4))

# %%
results = {}
for name, fn in (("ammi", train_ammi), ("bmmi", train_bmmi)):
    start = time.perf_counter()
    model, state = fn(corpus, Hyperparams())
    rep = evaluate(model, corpus)
    results[name] = model
    print(
        f"{name}: {state.epoch} epochs (best {state.best_epoch}), test precision {rep['precision']:.4f}, "
        f"{rep['distinct_codes']} distinct codes, {time.perf_counter() - start:.0f} s"
    )

# %% [markdown]
# A larger entropy weight beta spreads documents over more codes.

# %%
for beta in (1.0, 3.0):
    model, _ = train_ammi(corpus, Hyperparams(beta=beta, max_epochs=5))
    print(f"beta={beta}: {evaluate(model, corpus)['distinct_codes']} distinct codes")

# %% [markdown]
# Drift: the nearest training document at Hamming distance at least d.

# %%
model = results["ammi"]
docs = corpus.docs("train")
index = CodeIndex.from_bits([d.id for d in docs], encode_matrix(model, corpus.matrix("train")))
query = corpus.docs("test")[0]
qbits = BitVector(encode_matrix(model, corpus.matrix("test")[:1])[0])
rows = drift_report(qbits, index, [0, 2, 4, 8, 12])
print("query labels", sorted(query.labels))
print(format_drift(query.id, rows), end="")
print("labels along the report", [sorted(corpus.get(r.doc_id).labels) if r.doc_id else None for r in rows])
