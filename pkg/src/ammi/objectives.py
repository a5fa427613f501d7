"""Batch estimators of the entropy terms and the losses built from them.

Tables enter as sigmoid logits of shape ``(N, m, 2**order)`` (one table per
sample) or ``(m, 2**order)`` for the shared prior. Lists of
:class:`~ammi.markov.MarkovParams` are accepted wherever a batch is.
All values are in nats.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, as_tensor, logsumexp, sparse_matmul
from .markov import MarkovParams, cross_entropy_logits, log_bit_probs_from_logits

BMMI_MAX_M = 16
ENUM_MAX_M = 20

__all__ = [
    "BatchEstimate",
    "as_logits",
    "cond_cross_entropy_batch",
    "prior_cross_entropy_batch",
    "cond_entropy_batch",
    "brute_entropy_batch",
    "AdversarialLosses",
    "ammi_losses",
    "ammi_single_losses",
    "bmmi_loss",
]


@dataclass
class BatchEstimate:
    """Mean of per-sample contributions, kept alongside the contributions themselves."""

    value: Tensor
    per_sample: Tensor
    tag: str

    @property
    def n(self) -> int:
        return self.per_sample.shape[0]

    def __float__(self) -> float:
        return float(self.value.data)


def as_logits(tables) -> Tensor:
    """Accept a Tensor/array of logits or a (list of) MarkovParams."""
    if isinstance(tables, MarkovParams):
        return Tensor(tables.logits)
    if isinstance(tables, (list, tuple)) and tables and isinstance(tables[0], MarkovParams):
        return Tensor(np.stack([t.logits for t in tables]))
    return as_tensor(tables)


def _order(logits: Tensor) -> int:
    return int(logits.shape[-1]).bit_length() - 1


def _estimate(per_sample: Tensor, tag: str) -> BatchEstimate:
    if not np.all(np.isfinite(per_sample.data)):
        raise FloatingPointError(f"non-finite contribution in {tag}")
    return BatchEstimate(per_sample.mean(), per_sample, tag)


def cond_cross_entropy_batch(encoder_tables, variational_tables) -> BatchEstimate:
    """Cross entropy of each encoder table against its paired variational table."""
    p, q = as_logits(encoder_tables), as_logits(variational_tables)
    if p.shape[:2] != q.shape[:2]:
        raise ValueError(f"batch/code shapes differ: {p.shape[:2]} vs {q.shape[:2]}")
    if _order(q) < _order(p):
        raise ValueError(f"variational order {_order(q)} is below encoder order {_order(p)}")
    return _estimate(cross_entropy_logits(p, q), "cond_cross_entropy")


def prior_cross_entropy_batch(encoder_tables, prior_table) -> BatchEstimate:
    """Cross entropy of each encoder table against one shared prior table."""
    p, q = as_logits(encoder_tables), as_logits(prior_table)
    if q.ndim != 2:
        raise ValueError("the prior must be a single (m, 2**r) table")
    if _order(q) < _order(p):
        raise ValueError(f"prior order {_order(q)} is below encoder order {_order(p)}")
    return _estimate(cross_entropy_logits(p, q), "prior_cross_entropy")


def cond_entropy_batch(encoder_tables) -> BatchEstimate:
    p = as_logits(encoder_tables)
    return _estimate(cross_entropy_logits(p, p), "cond_entropy")


@lru_cache(maxsize=8)
def _code_indicator(m: int, o: int) -> sp.csr_matrix:
    """Sparse ``(2**m, m * 2**o * 2)`` matrix selecting each code's conditional factors."""
    n = 1 << m
    k = np.arange(n, dtype=np.int64)
    z = (k[:, None] >> (m - 1 - np.arange(m))) & 1  # z_1 is the most significant bit
    ctx = np.zeros((n, m), dtype=np.int64)
    for j in range(1, o + 1):
        ctx[:, j:] |= z[:, :-j] << (j - 1) if j < m else 0
    cols = ((np.arange(m)[None, :] << o) + ctx) * 2 + z
    rows = np.repeat(k, m)
    return sp.csr_matrix((np.ones(n * m), (rows, cols.ravel())), shape=(n, m * (2 << o)))


def brute_entropy_batch(encoder_tables) -> Tensor:
    """Entropy of the batch's uniform code mixture by full enumeration.

    Equals ``sum_z mix(z) log(1 / mix(z))`` with
    ``mix(z) = (1/N) sum_l p(z | y_l)``. Differentiable; m <= 20.
    """
    p = as_logits(encoder_tables)
    N, m, C = p.shape
    if m > ENUM_MAX_M:
        raise ValueError(f"enumeration over 2**{m} codes exceeds the m <= {ENUM_MAX_M} guard")
    logbits = log_bit_probs_from_logits(p).reshape(N, m * C * 2)
    log_pz = sparse_matmul(_code_indicator(m, _order(p)), logbits.T)  # (2**m, N)
    log_mix = logsumexp(log_pz, axis=1) - np.log(N)
    return -(log_mix.exp() * log_mix).sum()


class AdversarialLosses(NamedTuple):
    prior_loss: Tensor
    encoder_loss: Tensor


def _warn_beta(beta: float) -> None:
    if beta < 1:
        warnings.warn(f"entropy weight beta={beta} is below 1", stacklevel=3)


def ammi_losses(encoder_tables, variational_tables, prior_table, beta: float) -> AdversarialLosses:
    """Prior loss (encoder frozen) and encoder loss ``H+(Z|X) - beta * H+(Z)`` (prior frozen)."""
    _warn_beta(beta)
    p, q_var, q_prior = as_logits(encoder_tables), as_logits(variational_tables), as_logits(prior_table)
    prior_loss = prior_cross_entropy_batch(p.detach(), q_prior).value
    cond = cond_cross_entropy_batch(p, q_var).value
    ent = prior_cross_entropy_batch(p, q_prior.detach()).value
    return AdversarialLosses(prior_loss, cond - beta * ent)


def ammi_single_losses(encoder_tables, prior_table, beta: float) -> AdversarialLosses:
    """Single-variable form: the conditional term is the encoder's own entropy ``H(Z|Y)``."""
    _warn_beta(beta)
    p, q_prior = as_logits(encoder_tables), as_logits(prior_table)
    prior_loss = prior_cross_entropy_batch(p.detach(), q_prior).value
    cond = cond_entropy_batch(p).value
    ent = prior_cross_entropy_batch(p, q_prior.detach()).value
    return AdversarialLosses(prior_loss, cond - beta * ent)


def bmmi_loss(encoder_tables) -> Tensor:
    """``-(H(Z) - H(Z|Y))`` with the mixture entropy computed by enumeration; m <= 16."""
    p = as_logits(encoder_tables)
    if p.shape[1] > BMMI_MAX_M:
        raise ValueError(f"brute-force MMI is limited to m <= {BMMI_MAX_M}, got {p.shape[1]}")
    return cond_entropy_batch(p).value - brute_entropy_batch(p)
