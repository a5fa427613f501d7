# %% [markdown]
# Markov distributions over binary codes
#
# A code distribution of order o stores, for each bit position, the
# probability that the bit is 1 given the previous o bits. Bits before the
# first position are taken to be 0. This script builds a few tables, runs the
# dynamic programs on them and compares each answer with plain enumeration
# over all 2**m codes.

# %%
import math

import numpy as np

from ammi import brute
from ammi.markov import MarkovParams, cross_entropy, entropy, forward, marginals, sample, viterbi

rng = np.random.default_rng(0)
p = MarkovParams.random(10, 1, rng)  # order 1: 10 positions x 2 contexts
q = MarkovParams.random(10, 3, rng)  # order 3: 10 positions x 8 contexts
print("table shapes", p.table.shape, q.table.shape)

# %% [markdown]
# Cross entropy and entropy: linear-time recursions against 1024-term sums.

# %%
print(f"H(p, q)  DP {cross_entropy(p, q):.12f}  enumeration {brute.cross_entropy(p, q):.12f}")
print(f"H(q)     DP {entropy(q):.12f}  enumeration {brute.entropy(q):.12f}")
print(f"H(p) <= H(p, q): {entropy(p) <= cross_entropy(p, q)}")

# %% [markdown]
# Marginals of the context at each position, and of wider windows.

# %%
pi = forward(p).pi
print("P(z_{i-1} = 1) by position:", np.round(pi[:, 1], 3))
mu = marginals(p, 3).mu
print("window marginals match enumeration:", np.allclose(mu, brute.window_marginals(p, 3), atol=1e-12))

# %% [markdown]
# The most likely code, and a check that sampling follows the table.

# %%
code, logprob = viterbi(q)
ref, ref_lp = brute.argmax(q)
print("viterbi", "".join(map(str, code.bits)), f"p = {math.exp(logprob):.5f}")
print("enumerated argmax", "".join(map(str, ref)), f"p = {math.exp(ref_lp):.5f}")

draws = sample(p, seed=1, size=50_000)
print("sampled bit means", np.round(draws.mean(axis=0), 3))
print("exact bit means  ", np.round(marginals(p, 1).mu[:, 1::2].sum(axis=1), 3))

# %% [markdown]
# Uniform bits give m log 2 nats of entropy, the upper end of the range.

# %%
for m in (4, 8, 16):
    print(m, round(entropy(MarkovParams.uniform(m)), 6), round(m * math.log(2), 6))
