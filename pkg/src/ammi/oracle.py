"""Self-check suites: dynamic programs against enumeration, gradients against finite differences."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import brute, markov
from .autodiff import Tensor, backward, numerical_gradient
from .markov import MarkovParams
from .objectives import (
    brute_entropy_batch,
    cond_cross_entropy_batch,
    cond_entropy_batch,
    prior_cross_entropy_batch,
)

__all__ = ["OracleReport", "rel_err", "dp_suite", "gradient_suite", "run_suites"]

DP_TOL = 1e-8
GRAD_TOL = 1e-4


def rel_err(a, b) -> float:
    """Largest elementwise ``|a - b| / max(|a|, |b|)``, with ``0/0`` read as 0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(scale > 0, diff / scale, 0.0)
    return float(r.max()) if r.size else 0.0


@dataclass
class OracleReport:
    max_err: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    cases: int = 0

    def record(self, check: str, err: float, tol: float, case: str) -> None:
        self.max_err[check] = max(self.max_err.get(check, 0.0), err)
        if not err <= tol:
            self.failures.append(f"{check} {case}: rel err {err:.3e} > {tol:g}")

    def merge(self, other: "OracleReport") -> "OracleReport":
        for k, v in other.max_err.items():
            self.max_err[k] = max(self.max_err.get(k, 0.0), v)
        self.failures.extend(other.failures)
        self.cases += other.cases
        return self

    @property
    def ok(self) -> bool:
        return not self.failures


def dp_suite(
    max_m: int = 12, max_order: int = 3, trials: int = 50, seed: int = 0, inject_bug: bool = False
) -> OracleReport:
    """Cross entropy, entropy, forward/window marginals and Viterbi against enumeration.

    Every ``(o, o')`` with ``0 <= o <= o' <= max_order`` and every
    ``m <= max_m`` gets ``trials`` random pairs ``p`` (order ``o``) and
    ``q`` (order ``o'``).
    """
    if max_m > brute.MAX_M:
        raise ValueError(f"max_m={max_m} exceeds the enumeration limit {brute.MAX_M}")
    rep = OracleReport()
    for m, o, o2 in itertools.product(range(1, max_m + 1), range(max_order + 1), range(max_order + 1)):
        if o2 < o:
            continue
        rng = np.random.default_rng([seed, m, o, o2])
        for t in range(trials):
            case = f"m={m} o={o} o'={o2} trial={t}"
            p = MarkovParams.random(m, o, rng)
            q = MarkovParams.random(m, o2, rng)
            ce = markov.cross_entropy(p, q)
            if inject_bug:
                ce *= 1 + 1e-6
            rep.record("cross_entropy", rel_err(ce, brute.cross_entropy(p, q)), DP_TOL, case)
            rep.record("entropy", rel_err(markov.entropy(q), brute.entropy(q)), DP_TOL, case)
            rep.record("forward", rel_err(markov.forward(p).pi, brute.context_marginals(p)), DP_TOL, case)
            rep.record(
                "marginals", rel_err(markov.marginals(p, o2).mu, brute.window_marginals(p, o2)), DP_TOL, case
            )
            code, lp = markov.viterbi(q)
            ref_code, ref_lp = brute.argmax(q)
            rep.record("viterbi_code", 0.0 if np.array_equal(code.bits, ref_code) else np.inf, 0.0, case)
            rep.record("viterbi_logprob", rel_err(lp, ref_lp), DP_TOL, case)
            rep.cases += 1
    return rep


def _grad_check(rep: OracleReport, name: str, loss_fn, tensors: dict[str, Tensor], case: str) -> None:
    loss = loss_fn()
    grads = backward(loss, tensors)
    for key, t in tensors.items():
        fd = numerical_gradient(lambda: loss_fn().item(), t.data, step=1e-4)
        g = grads[key]
        err = float(np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12))
        rep.record(f"grad:{name}", err, GRAD_TOL, f"{case} wrt {key}")


def gradient_suite(m: int = 8, trials: int = 3, seed: int = 0, n: int = 3) -> OracleReport:
    """Analytic gradients of the four batch estimators against central differences."""
    rep = OracleReport()
    for t in range(trials):
        rng = np.random.default_rng([seed, 101, t])
        o, h, r = t % 2, 1 + t % 2, 2
        p = Tensor(rng.uniform(-2, 2, (n, m, 1 << o)), requires_grad=True, name="p")
        qv = Tensor(rng.uniform(-2, 2, (n, m, 1 << h)), requires_grad=True, name="q_var")
        qp = Tensor(rng.uniform(-2, 2, (m, 1 << r)), requires_grad=True, name="q_prior")
        case = f"m={m} o={o} trial={t}"
        _grad_check(rep, "cond_cross_entropy", lambda: cond_cross_entropy_batch(p, qv).value, {"p": p, "q": qv}, case)
        _grad_check(rep, "prior_cross_entropy", lambda: prior_cross_entropy_batch(p, qp).value, {"p": p, "q": qp}, case)
        _grad_check(rep, "cond_entropy", lambda: cond_entropy_batch(p).value, {"p": p}, case)
        _grad_check(rep, "brute_entropy", lambda: brute_entropy_batch(p), {"p": p}, case)
        rep.cases += 1
    return rep


def run_suites(
    max_m: int = 12, max_order: int = 3, trials: int = 50, seed: int = 0, inject_bug: bool = False
) -> OracleReport:
    rep = dp_suite(max_m, max_order, trials, seed, inject_bug)
    if trials > 0:
        rep.merge(gradient_suite(min(8, max_m), trials=min(trials, 3), seed=seed))
    return rep
