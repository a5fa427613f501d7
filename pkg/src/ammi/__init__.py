"""Discrete document hashing with Markov-structured binary codes.

Submodules: ``markov`` (code distributions and their dynamic programs),
``brute`` (enumeration oracle), ``autodiff`` and ``nn`` (reverse-mode
engine, networks, Adam), ``objectives`` (entropy estimators and losses),
``training``, ``corpus``, ``retrieval``, ``model``, ``oracle`` and ``cli``.
"""

from .markov import BitVector, MarkovParams, cross_entropy, entropy, forward, marginals, viterbi

__version__ = "0.1.0"

__all__ = ["BitVector", "MarkovParams", "cross_entropy", "entropy", "forward", "marginals", "viterbi"]
