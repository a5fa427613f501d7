"""Hashing model: document encoder, optional variational encoder, and the variational prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor
from .markov import BitVector, MarkovParams, viterbi_batch
from .nn import FeedForward, PriorNetwork, forward_network

__all__ = ["HashingModel", "encode", "encode_matrix", "bow_codes"]


@dataclass
class HashingModel:
    m: int
    o: int
    encoder: FeedForward
    variational: FeedForward | None = None
    prior: PriorNetwork | None = None
    h: int = 0

    @classmethod
    def build(
        cls,
        vocab_size: int,
        m: int,
        o: int = 0,
        r: int | None = 3,
        h: int | None = None,
        alpha: float = 0.1,
        encoder_hidden: int = 512,
        encoder_depth: int = 1,
        prior_dim: int = 64,
        prior_hidden: int = 512,
        prior_depth: int = 2,
        seed: int = 0,
    ) -> "HashingModel":
        """Initialise every parameter from one seeded stream in a fixed order (psi, phi, theta)."""
        rng = np.random.default_rng(seed)
        enc_sizes = [vocab_size] + [encoder_hidden] * encoder_depth
        encoder = FeedForward.build(enc_sizes + [m << o], alpha, rng, collection="psi")
        variational = None
        if h is not None:
            if h < o:
                raise ValueError(f"variational order h={h} must be >= encoder order o={o}")
            variational = FeedForward.build(enc_sizes + [m << h], alpha, rng, collection="phi")
        prior = None
        if r is not None:
            if r < o:
                raise ValueError(f"prior order r={r} must be >= encoder order o={o}")
            prior = PriorNetwork.build(m, r, prior_dim, prior_hidden, prior_depth, alpha, rng)
        return cls(m, o, encoder, variational, prior, h or 0)

    def encoder_params(self) -> dict[str, Tensor]:
        out = dict(self.encoder.params())
        if self.variational is not None:
            out.update(self.variational.params())
        return out

    def prior_params(self) -> dict[str, Tensor]:
        return self.prior.params() if self.prior is not None else {}

    def params(self) -> dict[str, Tensor]:
        return {**self.encoder_params(), **self.prior_params()}

    def encoder_logits(self, x) -> Tensor:
        return self.encoder.logits(x).reshape(x.shape[0], self.m, 1 << self.o)

    def variational_logits(self, x) -> Tensor:
        if self.variational is None:
            raise ValueError("model has no variational encoder")
        return self.variational.logits(x).reshape(x.shape[0], self.m, 1 << self.h)

    def prior_logits(self) -> Tensor:
        if self.prior is None:
            raise ValueError("model has no prior")
        return self.prior.logits()

    def encoder_tables(self, x) -> np.ndarray:
        """``(N, m, 2**o)`` clamped probabilities of bit 1."""
        return forward_network(self.encoder, x).data.reshape(x.shape[0], self.m, 1 << self.o)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in params.items():
            if arrays[name].shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params().items()}


def encode_matrix(model: HashingModel, x: sp.spmatrix, batch: int = 1024) -> np.ndarray:
    """Viterbi codes ``(n, m)`` for every row of a TFIDF matrix."""
    out = np.zeros((x.shape[0], model.m), dtype=np.uint8)
    for s in range(0, x.shape[0], batch):
        out[s : s + batch] = viterbi_batch(model.encoder_tables(x[s : s + batch]))[0]
    return out


def encode(model: HashingModel, tfidf) -> BitVector:
    """Code of one document: the most probable code under the encoder's table."""
    x = tfidf if sp.issparse(tfidf) else np.atleast_2d(np.asarray(tfidf, dtype=np.float64))
    table = MarkovParams(model.encoder_tables(x)[0], model.o)
    codes, _ = viterbi_batch(table.table[None])
    return BitVector(codes[0])


def bow_codes(x: sp.spmatrix) -> np.ndarray:
    """Bag-of-words presence bits: one bit per vocabulary term."""
    x = sp.csr_matrix(x)
    return (x.toarray() > 0).astype(np.uint8)
