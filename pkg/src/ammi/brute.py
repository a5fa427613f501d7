"""Exact quantities by enumerating every code in ``{0,1}^m``.

These are the reference oracles for the dynamic programs in
:mod:`ammi.markov`. They share no code with the DP kernels: each code's
probability is the direct product of its conditional factors.
"""

from __future__ import annotations

import numpy as np

from .markov import MarkovParams

MAX_M = 20

__all__ = [
    "MAX_M",
    "all_codes",
    "log_prob_all",
    "prob",
    "cross_entropy",
    "entropy",
    "argmax",
    "context_marginals",
    "window_marginals",
    "mixture_entropy",
]


def _check(m: int) -> None:
    if m > MAX_M:
        raise ValueError(f"enumeration over 2**{m} codes exceeds the m <= {MAX_M} guard")


def all_codes(m: int) -> np.ndarray:
    """``(2**m, m)`` uint8 array; row ``k`` is the binary expansion of ``k`` (z_1 most significant)."""
    _check(m)
    k = np.arange(1 << m, dtype=np.int64)
    return ((k[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)


def _contexts(codes: np.ndarray, o: int) -> np.ndarray:
    """Integer context of every position for every code, bits before position 1 read as 0."""
    n, m = codes.shape
    ctx = np.zeros((n, m), dtype=np.int64)
    for i in range(m):
        for j in range(1, o + 1):
            if i - j >= 0:
                ctx[:, i] |= codes[:, i - j].astype(np.int64) << (j - 1)
    return ctx


def log_prob_all(p: MarkovParams, codes: np.ndarray | None = None) -> np.ndarray:
    codes = all_codes(p.m) if codes is None else np.atleast_2d(codes)
    ctx = _contexts(codes, p.o)
    pos = np.arange(p.m)[None, :]
    p1 = p.table[pos, ctx]
    return np.where(codes == 1, np.log(p1), np.log1p(-p1)).sum(axis=1)


def prob(p: MarkovParams, z) -> float:
    _check(p.m)
    return float(np.exp(log_prob_all(p, np.asarray(z, dtype=np.uint8)[None, :])[0]))


def cross_entropy(p: MarkovParams, q: MarkovParams) -> float:
    if p.m != q.m:
        raise ValueError("code lengths differ")
    return float(-(np.exp(log_prob_all(p)) * log_prob_all(q)).sum())


def entropy(p: MarkovParams) -> float:
    lp = log_prob_all(p)
    return float(-(np.exp(lp) * lp).sum())


def argmax(p: MarkovParams) -> tuple[np.ndarray, float]:
    lp = log_prob_all(p)
    k = int(np.argmax(lp))
    return all_codes(p.m)[k], float(lp[k])


def context_marginals(p: MarkovParams) -> np.ndarray:
    """``(m, 2**o)``: probability of each context at each position (summing full codes)."""
    codes = all_codes(p.m)
    w = np.exp(log_prob_all(p, codes))
    ctx = _contexts(codes, p.o)
    out = np.zeros((p.m, 1 << p.o))
    for i in range(p.m):
        np.add.at(out[i], ctx[:, i], w)
    return out


def window_marginals(p: MarkovParams, order: int) -> np.ndarray:
    """``(m, 2**(order+1))``: probability of each length-``order+1`` window ending at each position."""
    codes = all_codes(p.m)
    w = np.exp(log_prob_all(p, codes))
    ctx = _contexts(codes, order)
    windows = (ctx << 1) | codes
    out = np.zeros((p.m, 1 << (order + 1)))
    for i in range(p.m):
        np.add.at(out[i], windows[:, i], w)
    return out


def mixture_entropy(tables: list[MarkovParams]) -> float:
    """Entropy of the uniform mixture of the given code distributions (nats)."""
    mix = np.mean([np.exp(log_prob_all(t)) for t in tables], axis=0)
    nz = mix > 0
    return float(-(mix[nz] * np.log(mix[nz])).sum())
