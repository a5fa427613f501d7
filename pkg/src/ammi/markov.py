"""Markov distributions over binary codes and exact dynamic programming on them.

A table of order ``o`` over ``{0,1}^m`` stores, for every position ``i`` and
context ``c`` of the ``o`` preceding bits, the probability that ``z_i = 1``.
Bits before position 1 are fixed to 0.

Context encoding: ``(z_{i-o}, ..., z_{i-1})`` maps to
``sum_j z_{i-j} * 2**(j-1)``, so the most recent bit is the lowest-order bit.
A window ``(z_{i-k}, ..., z_i)`` of length ``k+1`` is encoded the same way with
``z_i`` as bit 0; its context part is ``w >> 1``.

All DP state (context posteriors and window marginals) is kept in
probability space. The differentiable kernels operate on batched
:class:`~ammi.autodiff.Tensor` inputs; the :class:`MarkovParams` functions
wrap them for single, non-differentiable tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, as_tensor, concat, stack

PROB_MIN = 1e-7
PROB_MAX = 1.0 - 1e-7
LOGIT_MAX = float(np.log(PROB_MAX) - np.log(PROB_MIN))

__all__ = [
    "PROB_MIN",
    "PROB_MAX",
    "LOGIT_MAX",
    "MarkovParams",
    "ForwardTable",
    "MarginalTable",
    "BitVector",
    "forward",
    "marginals",
    "cross_entropy",
    "entropy",
    "viterbi",
    "viterbi_batch",
    "sample",
    "lift",
    "bit_probs_from_logits",
    "log_bit_probs_from_logits",
    "forward_kernel",
    "marginals_kernel",
    "cross_entropy_kernel",
    "cross_entropy_logits",
    "dump_table",
    "load_table",
]


@dataclass(frozen=True)
class MarkovParams:
    """Order-``o`` Markov distribution over ``{0,1}^m``.

    ``table[i, c]`` is P(z_{i+1} = 1 | context c); probabilities are clamped
    into ``[PROB_MIN, PROB_MAX]`` on construction.
    """

    table: np.ndarray
    o: int

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"table must be 2-D (m, 2**o), got shape {t.shape}")
        if self.o < 0 or t.shape[1] != 1 << self.o:
            raise ValueError(f"table shape {t.shape} does not match order {self.o}")
        if t.shape[0] < 1:
            raise ValueError("code length m must be positive")
        if not np.all(np.isfinite(t)):
            raise ValueError("table contains non-finite entries")
        t = np.clip(t, PROB_MIN, PROB_MAX)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def m(self) -> int:
        return self.table.shape[0]

    @classmethod
    def from_logits(cls, logits, o: int) -> "MarkovParams":
        logits = np.clip(np.asarray(logits, dtype=np.float64), -LOGIT_MAX, LOGIT_MAX)
        return cls(0.5 * (1.0 + np.tanh(0.5 * logits)), o)

    @classmethod
    def uniform(cls, m: int, o: int = 0) -> "MarkovParams":
        return cls(np.full((m, 1 << o), 0.5), o)

    @classmethod
    def random(cls, m: int, o: int, rng: np.random.Generator, low: float = 0.02) -> "MarkovParams":
        return cls(rng.uniform(low, 1.0 - low, size=(m, 1 << o)), o)

    @property
    def logits(self) -> np.ndarray:
        return np.log(self.table) - np.log1p(-self.table)

    def bit_probs(self) -> np.ndarray:
        """``(m, 2**o, 2)`` array of P(z_i = b | c)."""
        return np.stack([1.0 - self.table, self.table], axis=-1)


@dataclass(frozen=True)
class ForwardTable:
    """``pi[i-1, c]``: probability that the ``o`` bits preceding position ``i`` equal ``c``."""

    m: int
    o: int
    pi: np.ndarray


@dataclass(frozen=True)
class MarginalTable:
    """``mu[i-1, w]``: probability of the length ``order+1`` window ending at position ``i``."""

    m: int
    order: int
    mu: np.ndarray


@dataclass(frozen=True, eq=False)
class BitVector:
    """A binary code with a bit-packed ``uint64`` form for Hamming search."""

    bits: np.ndarray
    packed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.size == 0:
            raise ValueError("bits must be a non-empty 1-D sequence")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("bits must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "packed", pack_bits(bits[None, :])[0])

    @property
    def m(self) -> int:
        return self.bits.size

    @classmethod
    def from_packed(cls, packed: np.ndarray, m: int) -> "BitVector":
        return cls(unpack_bits(np.asarray(packed, dtype=np.uint64)[None, :], m)[0])

    def hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, m: int | None = None) -> "BitVector":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        bits = np.unpackbits(raw)
        return cls(bits if m is None else bits[:m])

    def __eq__(self, other) -> bool:
        return isinstance(other, BitVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def __len__(self) -> int:
        return self.m


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack an ``(n, m)`` 0/1 array into ``(n, ceil(m/64))`` little-endian ``uint64`` words."""
    bits = np.asarray(bits, dtype=np.uint8)
    n, m = bits.shape
    nwords = (m + 63) // 64
    padded = np.zeros((n, nwords * 64), dtype=np.uint8)
    padded[:, :m] = bits
    return np.packbits(padded, axis=1, bitorder="little").view("<u8").astype(np.uint64)


def unpack_bits(packed: np.ndarray, m: int) -> np.ndarray:
    packed = np.ascontiguousarray(packed, dtype="<u8")
    raw = packed.view(np.uint8).reshape(packed.shape[0], -1)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :m]


# ---------------------------------------------------------------------------
# differentiable batched kernels
# ---------------------------------------------------------------------------


def bit_probs_from_logits(logits: Tensor) -> Tensor:
    """``(..., C)`` logits to ``(..., C, 2)`` clamped probabilities of bit 0 / bit 1."""
    x = as_tensor(logits).clip(-LOGIT_MAX, LOGIT_MAX)
    return stack([(-x).sigmoid(), x.sigmoid()], axis=-1)


def log_bit_probs_from_logits(logits: Tensor) -> Tensor:
    x = as_tensor(logits).clip(-LOGIT_MAX, LOGIT_MAX)
    return stack([(-x).log_sigmoid(), x.log_sigmoid()], axis=-1)


def _order_of(width: int) -> int:
    o = width.bit_length() - 1
    if width != 1 << o:
        raise ValueError(f"context dimension {width} is not a power of two")
    return o


@lru_cache(maxsize=None)
def _forward_index(o: int):
    c = np.arange(1 << o)
    prev = np.stack([(c >> 1) | (t << (o - 1)) for t in (0, 1)])  # (2, C)
    return prev, np.broadcast_to(c & 1, prev.shape)


def forward_kernel(bits: Tensor) -> Tensor:
    """Context posteriors for a batch of tables.

    ``bits`` has shape ``(B, m, 2**o, 2)`` holding P(z_i = b | c). Returns
    ``(B, m, 2**o)`` where row ``i-1`` is the distribution of the context at
    position ``i``. Runs in O(m 2^o) per table.
    """
    bits = as_tensor(bits)
    B, m, C, _ = bits.shape
    o = _order_of(C)
    if o == 0:
        return Tensor(np.ones((B, m, 1)))
    base = np.zeros((B, C))
    base[:, 0] = 1.0
    prev, bit = _forward_index(o)
    rows = [Tensor(base)]
    for i in range(1, m):
        step = bits[:, i - 1, prev, bit]  # (B, 2, C)
        rows.append((step * rows[-1][:, prev]).sum(axis=1))
    return stack(rows, axis=1)


@lru_cache(maxsize=None)
def _window_index(m: int, o: int, order: int):
    w = np.arange(1 << (order + 1))
    mask = (1 << o) - 1
    pos = np.arange(m)
    factors = []
    for k in range(order - o + 1):
        rows = (pos - k + order)[:, None]
        factors.append((rows, ((w >> (k + 1)) & mask)[None, :], ((w >> k) & 1)[None, :]))
    pi_rows = (pos - (order - o) + order)[:, None]
    pi_ctx = ((w >> (order - o + 1)) & mask)[None, :]
    return factors, pi_rows, pi_ctx


def marginals_kernel(bits: Tensor, order: int) -> Tensor:
    """Window marginals of length ``order+1`` for a batch of order-``o`` tables.

    Each window probability is the context posterior at the window's first
    free position times the product of the ``order-o+1`` trailing
    conditional factors. Positions before 1 contribute a factor of
    ``[z = 0]``. Returns ``(B, m, 2**(order+1))``.
    """
    bits = as_tensor(bits)
    B, m, C, _ = bits.shape
    o = _order_of(C)
    if order < o:
        raise ValueError(f"target order {order} is below the table order {o}")
    pi = forward_kernel(bits)
    if order > 0:
        pad_bits = np.zeros((B, order, C, 2))
        pad_bits[..., 0] = 1.0
        pad_pi = np.zeros((B, order, C))
        pad_pi[..., 0] = 1.0
        bits = concat([Tensor(pad_bits), bits], axis=1)
        pi = concat([Tensor(pad_pi), pi], axis=1)
    factors, pi_rows, pi_ctx = _window_index(m, o, order)
    mu = pi[:, pi_rows, pi_ctx]
    for rows, ctx, bit in factors:
        mu = mu * bits[:, rows, ctx, bit]
    return mu


@lru_cache(maxsize=None)
def _xent_index(m: int, order: int):
    w = np.arange(1 << (order + 1))
    return np.arange(m)[:, None], (w >> 1)[None, :], (w & 1)[None, :]


def cross_entropy_kernel(p_bits: Tensor, q_logbits: Tensor) -> Tensor:
    """Per-table cross entropy ``-sum_z p(z) log q(z)`` in nats.

    ``p_bits``: ``(B, m, 2**o, 2)`` probabilities; ``q_logbits``:
    ``(B or 1, m, 2**o', 2)`` log-probabilities with ``o' >= o``. Returns
    ``(B,)``. Runtime O(m 2^o') per pair.
    """
    q_logbits = as_tensor(q_logbits)
    m = q_logbits.shape[1]
    order = _order_of(q_logbits.shape[2])
    mu = marginals_kernel(p_bits, order)
    pos, ctx, bit = _xent_index(m, order)
    lq = q_logbits[:, pos, ctx, bit]
    return -(mu * lq).sum(axis=(1, 2))


def cross_entropy_logits(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Cross entropy between batches of tables given as sigmoid logits.

    ``p_logits``: ``(B, m, 2**o)``; ``q_logits``: ``(B, m, 2**o')`` or
    ``(m, 2**o')`` for a table shared across the batch.
    """
    p_logits, q_logits = as_tensor(p_logits), as_tensor(q_logits)
    if q_logits.ndim == 2:
        q_logits = q_logits.reshape(1, *q_logits.shape)
    if p_logits.shape[1] != q_logits.shape[1]:
        raise ValueError(f"code lengths differ: {p_logits.shape[1]} vs {q_logits.shape[1]}")
    if q_logits.shape[2] < p_logits.shape[2]:
        raise ValueError("the second table must have Markov order >= the first")
    return cross_entropy_kernel(bit_probs_from_logits(p_logits), log_bit_probs_from_logits(q_logits))


# ---------------------------------------------------------------------------
# single-table API
# ---------------------------------------------------------------------------


def forward(p: MarkovParams) -> ForwardTable:
    pi = forward_kernel(Tensor(p.bit_probs()[None])).data[0]
    return ForwardTable(p.m, p.o, pi)


def marginals(p: MarkovParams, order: int) -> MarginalTable:
    if order < p.o:
        raise ValueError(f"target order {order} must be >= table order {p.o}")
    mu = marginals_kernel(Tensor(p.bit_probs()[None]), order).data[0]
    return MarginalTable(p.m, order, mu)


def cross_entropy(p: MarkovParams, q: MarkovParams) -> float:
    """H(p, q) in nats; requires ``q.o >= p.o``."""
    if p.m != q.m:
        raise ValueError(f"code lengths differ: {p.m} vs {q.m}")
    if q.o < p.o:
        raise ValueError(f"q order {q.o} must be >= p order {p.o}")
    out = cross_entropy_kernel(Tensor(p.bit_probs()[None]), Tensor(np.log(q.bit_probs())[None]))
    return float(out.data[0])


def entropy(p: MarkovParams) -> float:
    return cross_entropy(p, p)


def lift(p: MarkovParams, order: int) -> MarkovParams:
    """The same distribution written as an order-``order`` table (extra context bits ignored)."""
    if order < p.o:
        raise ValueError("cannot lower the order of a table")
    c = np.arange(1 << order) & ((1 << p.o) - 1)
    return MarkovParams(p.table[:, c], order)


def viterbi_batch(tables: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Most probable codes for a batch of ``(B, m, 2**o)`` probability tables.

    Ties prefer bit 0: the final context and every backpointer resolve to
    the smallest integer among equal scores. Returns ``(codes (B, m) uint8,
    log-probabilities (B,))``.
    """
    tables = np.clip(np.asarray(tables, dtype=np.float64), PROB_MIN, PROB_MAX)
    B, m, C = tables.shape
    o = _order_of(C)
    if o == 0:
        tables = np.repeat(tables, 2, axis=2)
        o, C = 1, 2
    logp = np.stack([np.log1p(-tables), np.log(tables)], axis=-1)  # (B, m, C, 2)
    n = np.arange(C)
    bit = n & 1
    pred = np.stack([(n >> 1) | (t << (o - 1)) for t in (0, 1)])  # (2, C)
    delta = np.full((B, C), -np.inf)
    delta[:, 0] = 0.0
    back = np.zeros((m, B, C), dtype=np.uint8)
    rows = np.arange(B)[:, None]
    for i in range(m):
        cand0 = delta[:, pred[0]] + logp[rows, i, pred[0][None, :], bit[None, :]]
        cand1 = delta[:, pred[1]] + logp[rows, i, pred[1][None, :], bit[None, :]]
        take1 = cand1 > cand0
        back[i] = take1
        delta = np.where(take1, cand1, cand0)
    state = np.argmax(delta, axis=1)
    best = delta[np.arange(B), state]
    codes = np.zeros((B, m), dtype=np.uint8)
    for i in range(m - 1, -1, -1):
        codes[:, i] = state & 1
        t = back[i, np.arange(B), state].astype(np.int64)
        state = (state >> 1) | (t << (o - 1))
    return codes, best


def viterbi(p: MarkovParams) -> tuple[BitVector, float]:
    codes, best = viterbi_batch(p.table[None])
    return BitVector(codes[0]), float(best[0])


def sample(p: MarkovParams, seed, size: int | None = None):
    """Draw codes left to right from the conditional factors.

    Returns one :class:`BitVector` when ``size`` is None, otherwise a
    ``(size, m)`` uint8 array.
    """
    rng = np.random.default_rng(seed)
    n = 1 if size is None else size
    mask = (1 << p.o) - 1
    ctx = np.zeros(n, dtype=np.int64)
    out = np.zeros((n, p.m), dtype=np.uint8)
    u = rng.random((n, p.m))
    for i in range(p.m):
        z = (u[:, i] < p.table[i, ctx]).astype(np.uint8)
        out[:, i] = z
        ctx = ((ctx << 1) | z) & mask
    return BitVector(out[0]) if size is None else out


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------


def dump_table(p: MarkovParams) -> str:
    """Plain-text dump: header ``# m=<m> o=<o>``, then ``position<TAB>context<TAB>prob`` lines.

    Positions are 1-based; contexts use the integer encoding described in
    the module docstring; probabilities are written with 17 significant digits.
    """
    lines = [f"# m={p.m} o={p.o}"]
    for i in range(p.m):
        for c in range(1 << p.o):
            lines.append(f"{i + 1}\t{c}\t{p.table[i, c]:.17g}")
    return "\n".join(lines) + "\n"


def load_table(text: str) -> MarkovParams:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = dict(kv.split("=") for kv in lines[0].lstrip("#").split())
    m, o = int(head["m"]), int(head["o"])
    table = np.full((m, 1 << o), np.nan)
    for ln in lines[1:]:
        i, c, prob = ln.split("\t")
        table[int(i) - 1, int(c)] = float(prob)
    if np.isnan(table).any():
        raise ValueError("table dump is missing entries")
    return MarkovParams(table, o)
