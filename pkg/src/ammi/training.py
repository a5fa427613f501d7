"""Adversarial and brute-force MMI training loops.

One AMMI batch update takes ``adv_steps`` Adam steps on the prior against
the frozen encoder tables, then one Adam step on the encoder (and the
variational encoder in the predictive setting) against the frozen prior.
Validation runs once per epoch; the best-scoring parameters are kept and
training stops after ``patience`` epochs without improvement.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, backward
from .corpus import Corpus, tfidf_matrix
from .markov import bit_probs_from_logits, marginals_kernel, PROB_MAX, PROB_MIN
from .model import HashingModel, encode_matrix
from .nn import (
    AdamState,
    PriorNetwork,
    adam_step,
    clip_by_global_norm,
    init_uniform,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import (
    BMMI_MAX_M,
    ammi_losses,
    ammi_single_losses,
    bmmi_loss,
    brute_entropy_batch,
    prior_cross_entropy_batch,
)
from .retrieval import CodeIndex, bit_usage, count_distinct_codes, pair_matching_precision, top_k_precision

LN2 = math.log(2.0)

__all__ = [
    "Hyperparams",
    "TrainState",
    "Trainer",
    "train_ammi",
    "train_bmmi",
    "validation_task_precision",
    "evaluate",
    "order_sweep",
    "optimal_prior_cross_entropy",
    "grid_search",
]


@dataclass
class Hyperparams:
    """Training configuration. Field names double as config-file keys."""

    m: int = 16
    o: int = 0
    h: int = 0
    r: int = 3
    alpha: float = 0.1
    batch_size: int = 64
    adv_steps: int = 2
    adv_lr: float = 0.003
    lr: float = 0.001
    beta: float = 2.0
    objective: str = "ammi"
    predictive: bool = False
    encoder_hidden: int = 512
    encoder_depth: int = 1
    prior_dim: int = 64
    prior_hidden: int = 512
    prior_depth: int = 2
    patience: int = 10
    max_epochs: int = 50
    k: int = 100
    validation: str = "auto"
    clip_norm: float = 0.0
    seed: int = 0

    def validate(self) -> "Hyperparams":
        if self.objective not in ("ammi", "bmmi"):
            raise ValueError(f"objective must be 'ammi' or 'bmmi', got {self.objective!r}")
        if self.m < 1 or self.o < 0:
            raise ValueError("need m >= 1 and o >= 0")
        if self.objective == "ammi":
            if self.r < self.o:
                raise ValueError(f"prior order r={self.r} must be >= encoder order o={self.o}")
            if self.predictive and self.h < self.o:
                raise ValueError(f"variational order h={self.h} must be >= encoder order o={self.o}")
        elif self.m > BMMI_MAX_M:
            raise ValueError(f"brute-force MMI needs m <= {BMMI_MAX_M}")
        if self.adv_steps < 1:
            raise ValueError("adv_steps (G) must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0 or self.adv_lr < 0 or self.alpha < 0:
            raise ValueError("learning rates and alpha must be non-negative")
        if self.encoder_depth < 1 or self.prior_depth < 1:
            raise ValueError("network depths must be >= 1")
        if self.validation not in ("auto", "labels", "pairs"):
            raise ValueError(f"unknown validation mode {self.validation!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise KeyError(f"unknown hyperparameters: {sorted(unknown)}")
        defaults = cls()
        kwargs = {}
        for k, v in d.items():
            kind = type(getattr(defaults, k))
            kwargs[k] = v if kind is str else (bool(v) if kind is bool else kind(v))
        return cls(**kwargs)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainState:
    epoch: int = 0
    batch: int = 0
    best_score: float = -math.inf
    best_epoch: int = -1
    bad_epochs: int = 0
    done: bool = False
    best_params: dict[str, np.ndarray] | None = None
    trace: dict[str, list] = field(
        default_factory=lambda: {k: [] for k in ("epoch", "batch", "encoder_loss", "prior_loss", "surrogate")}
    )
    prior_inner: list[float] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    optimizers: dict[str, AdamState] = field(default_factory=dict)


def _index_codes(model: HashingModel, corpus: Corpus, docs) -> CodeIndex:
    bits = encode_matrix(model, tfidf_matrix(docs, corpus.vocab_size))
    return CodeIndex.from_bits([d.id for d in docs], bits)


def _pair_eval(model: HashingModel, corpus: Corpus, split: str, k: int) -> float:
    ys, _ = corpus.pairs(split)
    targets = {d.pair_id for s in ("train", split) for d in corpus.docs(s) if d.pair_id is not None}
    candidates = [d for s in ("train", split) for d in corpus.docs(s) if d.id in targets]
    index = _index_codes(model, corpus, candidates)
    queries = _index_codes(model, corpus, ys)
    return pair_matching_precision(queries.packed, [d.pair_id for d in ys], index, min(k, len(index)))


def _label_eval(model: HashingModel, corpus: Corpus, split: str, k: int) -> float:
    index = _index_codes(model, corpus, corpus.docs("train"))
    queries = _index_codes(model, corpus, corpus.docs(split))
    return top_k_precision(
        queries.packed,
        corpus.label_matrix(split),
        index,
        corpus.label_matrix("train"),
        k,
        query_ids=[d.id for d in corpus.docs(split)],
    )


def validation_task_precision(
    model: HashingModel, corpus: Corpus, k: int = 100, split: str = "val", mode: str = "auto"
) -> float:
    """Retrieval score used for model selection.

    ``labels``: top-``k`` label precision of ``split`` queries against the
    train index. ``pairs``: pair-matching precision of the split's query
    documents against all pair partners in train and ``split``. ``auto``
    uses labels when every document is labelled, else pairs.
    """
    if mode == "auto":
        if corpus.has_labels("train", split):
            mode = "labels"
        elif corpus.has_pairs(split):
            mode = "pairs"
        else:
            raise ValueError(f"split {split!r} has neither labels nor pairs to validate on")
    if mode == "labels":
        return _label_eval(model, corpus, split, k)
    if not corpus.has_pairs(split):
        raise ValueError(f"split {split!r} has no pairs")
    return _pair_eval(model, corpus, split, k)


def evaluate(model: HashingModel, corpus: Corpus, k: int = 100, split: str = "test") -> dict:
    """Test-time report: precisions, distinct-code count on train, per-bit usage."""
    out: dict = {"split": split, "k": k}
    if corpus.has_labels("train", split):
        out["precision"] = _label_eval(model, corpus, split, k)
    if corpus.has_pairs(split):
        out["pair_precision"] = _pair_eval(model, corpus, split, k)
    train_bits = encode_matrix(model, corpus.matrix("train"))
    out["distinct_codes"] = count_distinct_codes(train_bits)
    out["train_docs"] = len(corpus.docs("train"))
    out["bit_usage"] = [float(x) for x in bit_usage(train_bits)]
    return out


class Trainer:
    """Stateful training loop; resumable at batch granularity."""

    def __init__(
        self,
        corpus: Corpus,
        hyper: Hyperparams,
        validation_task: Callable[[HashingModel], float] | None = None,
    ):
        hyper.validate()
        self.corpus = corpus
        self.hyper = hyper
        bmmi = hyper.objective == "bmmi"
        self.model = HashingModel.build(
            corpus.vocab_size,
            hyper.m,
            hyper.o,
            r=None if bmmi else hyper.r,
            h=hyper.h if (hyper.predictive and not bmmi) else None,
            alpha=hyper.alpha,
            encoder_hidden=hyper.encoder_hidden,
            encoder_depth=hyper.encoder_depth,
            prior_dim=hyper.prior_dim,
            prior_hidden=hyper.prior_hidden,
            prior_depth=hyper.prior_depth,
            seed=hyper.seed,
        )
        self.optimizers = {"encoder": AdamState(hyper.lr), "prior": AdamState(hyper.adv_lr)}
        self.state = TrainState()
        self.epoch_seconds: list[float] = []
        if hyper.predictive:
            ys, xs = corpus.pairs("train")
            if not ys:
                raise ValueError("predictive training needs pairs in the train split")
            self.y = tfidf_matrix(ys, corpus.vocab_size)
            self.x = tfidf_matrix(xs, corpus.vocab_size)
        else:
            self.y = corpus.matrix("train")
            self.x = None
        if self.y.shape[0] == 0:
            raise ValueError("the train split is empty")
        if validation_task is None:
            mode = hyper.validation
            if mode == "auto" and hyper.predictive:
                mode = "pairs"
            validation_task = lambda model: validation_task_precision(model, corpus, hyper.k, "val", mode)  # noqa: E731
        self.validation_task = validation_task

    # -- one batch ------------------------------------------------------
    def _update(self, loss: Tensor, params: dict[str, Tensor], group: str, lr: float) -> None:
        grads = backward(loss, params)
        if self.hyper.clip_norm > 0:
            grads = clip_by_global_norm(grads, self.hyper.clip_norm)
        adam_step(params, grads, self.optimizers[group], lr)

    def step(self, idx: np.ndarray) -> dict:
        """One batch update; non-finite values abort with the epoch and batch position."""
        try:
            return self._step(idx)
        except FloatingPointError as exc:
            where = f"epoch {self.state.epoch} batch {self.state.batch}"
            if where in str(exc):
                raise
            raise FloatingPointError(f"{where}: {exc}") from exc

    def _step(self, idx: np.ndarray) -> dict:
        h = self.hyper
        p = self.model.encoder_logits(self.y[idx])
        if h.objective == "bmmi":
            loss = bmmi_loss(p)
            self._check(loss=loss.item())
            self._update(loss, self.model.encoder_params(), "encoder", h.lr)
            return {"encoder_loss": loss.item(), "prior_loss": math.nan, "surrogate": -loss.item(), "inner": []}

        p_fixed = p.detach()
        inner = []
        for _ in range(h.adv_steps):
            loss = prior_cross_entropy_batch(p_fixed, self.model.prior_logits()).value
            inner.append(loss.item())
            self._check(prior_loss=inner[-1])
            self._update(loss, self.model.prior_params(), "prior", h.adv_lr)

        q = self.model.prior_logits()
        if h.predictive:
            losses = ammi_losses(p, self.model.variational_logits(self.x[idx]), q, h.beta)
        else:
            losses = ammi_single_losses(p, q, h.beta)
        enc, prior = losses.encoder_loss.item(), losses.prior_loss.item()
        self._check(encoder_loss=enc, prior_loss=prior)
        self._update(losses.encoder_loss, self.model.encoder_params(), "encoder", h.lr)
        cond = enc + h.beta * prior
        return {"encoder_loss": enc, "prior_loss": prior, "surrogate": prior - cond, "inner": inner}

    def _check(self, **values: float) -> None:
        bad = {k: v for k, v in values.items() if not math.isfinite(v)}
        if bad:
            raise FloatingPointError(
                f"non-finite loss at epoch {self.state.epoch} batch {self.state.batch}: "
                + ", ".join(f"{k}={v}" for k, v in values.items())
            )

    # -- epochs ---------------------------------------------------------
    def epoch_batches(self, epoch: int) -> list[np.ndarray]:
        n, size = self.y.shape[0], self.hyper.batch_size
        perm = np.random.default_rng([self.hyper.seed, epoch]).permutation(n)
        return [perm[s : s + size] for s in range(0, n, size)]

    def _record(self, out: dict) -> None:
        tr = self.state.trace
        tr["epoch"].append(self.state.epoch)
        tr["batch"].append(self.state.batch)
        for key in ("encoder_loss", "prior_loss", "surrogate"):
            tr[key].append(out[key])
        self.state.prior_inner.extend(out["inner"])

    def _end_epoch(self) -> None:
        st, h = self.state, self.hyper
        score = float(self.validation_task(self.model))
        rows = [k for k, e in enumerate(st.trace["epoch"]) if e == st.epoch]
        mean = lambda key: float(np.mean([st.trace[key][k] for k in rows]))  # noqa: E731
        improved = score > st.best_score
        if improved:
            st.best_score, st.best_epoch, st.bad_epochs = score, st.epoch + 1, 0
            st.best_params = self.model.arrays()
        else:
            st.bad_epochs += 1
        surrogate = mean("surrogate")
        st.history.append(
            {
                "epoch": st.epoch + 1,
                "encoder_loss": mean("encoder_loss"),
                "prior_loss": mean("prior_loss"),
                "surrogate_nats": surrogate,
                "surrogate_bits": surrogate / LN2,
                "val_score": score,
            }
        )
        st.epoch += 1
        st.batch = 0
        if st.bad_epochs >= h.patience or st.epoch >= h.max_epochs:
            st.done = True

    def run(self, max_batches: int | None = None, on_epoch: Callable[["Trainer"], None] | None = None) -> TrainState:
        """Train until early stopping, or pause after ``max_batches`` batch updates.

        ``on_epoch`` is called after every validation pass (e.g. to checkpoint).
        """
        taken = 0
        while not self.state.done:
            start = time.perf_counter()
            batches = self.epoch_batches(self.state.epoch)
            while self.state.batch < len(batches):
                if max_batches is not None and taken >= max_batches:
                    return self.snapshot()
                self._record(self.step(batches[self.state.batch]))
                self.state.batch += 1
                taken += 1
            self._end_epoch()
            self.epoch_seconds.append(time.perf_counter() - start)
            if on_epoch is not None:
                on_epoch(self)
        if self.state.best_params is not None:
            self.model.load_arrays(self.state.best_params)
        return self.snapshot()

    def snapshot(self) -> TrainState:
        st = self.state
        st.params = self.model.arrays()
        st.optimizers = self.optimizers
        return st

    # -- checkpoints ----------------------------------------------------
    def save(self, path: str | Path, config_hash: str | None = None) -> None:
        st = self.state
        arrays = {f"trace/{k}": np.asarray(v, dtype=np.float64) for k, v in st.trace.items()}
        arrays["prior_inner"] = np.asarray(st.prior_inner, dtype=np.float64)
        if st.best_params is not None:
            arrays.update({f"best/{k}": v for k, v in st.best_params.items()})
        extra = {
            "hyper": self.hyper.to_dict(),
            "epoch": st.epoch,
            "batch": st.batch,
            "best_score": st.best_score,
            "best_epoch": st.best_epoch,
            "bad_epochs": st.bad_epochs,
            "done": st.done,
            "history": st.history,
        }
        save_checkpoint(path, self.model.arrays(), self.optimizers, config_hash or self.hyper.config_hash(), extra, arrays)

    @classmethod
    def load(
        cls,
        path: str | Path,
        corpus: Corpus,
        config_hash: str | None = None,
        validation_task: Callable[[HashingModel], float] | None = None,
    ) -> "Trainer":
        ck = load_checkpoint(path, config_hash)
        extra = ck["extra"]
        trainer = cls(corpus, Hyperparams.from_dict(extra["hyper"]), validation_task)
        trainer.model.load_arrays(ck["params"])
        trainer.optimizers = ck["optimizers"]
        st = trainer.state
        for key in ("epoch", "batch", "best_score", "best_epoch", "bad_epochs", "done", "history"):
            setattr(st, key, extra[key])
        arrays = ck["arrays"]
        ints = {"epoch", "batch"}
        for key in st.trace:
            vals = arrays[f"trace/{key}"].tolist()
            st.trace[key] = [int(v) for v in vals] if key in ints else vals
        st.prior_inner = arrays["prior_inner"].tolist()
        best = {k[5:]: v for k, v in arrays.items() if k.startswith("best/")}
        st.best_params = best or None
        return trainer


def train_ammi(corpus: Corpus, hyper: Hyperparams, validation_task=None) -> tuple[HashingModel, TrainState]:
    hyper = replace(hyper, objective="ammi")
    trainer = Trainer(corpus, hyper, validation_task)
    return trainer.model, trainer.run()


def train_bmmi(corpus: Corpus, hyper: Hyperparams, validation_task=None) -> tuple[HashingModel, TrainState]:
    hyper = replace(hyper, objective="bmmi", predictive=False)
    trainer = Trainer(corpus, hyper, validation_task)
    return trainer.model, trainer.run()


# ---------------------------------------------------------------------------
# prior-order study
# ---------------------------------------------------------------------------


def optimal_prior_cross_entropy(encoder_logits, r: int) -> float:
    """Exact minimum over order-``r`` prior tables of the batch prior cross entropy.

    The cross entropy is linear in the batch-averaged window marginals, so
    the best table is the clamped conditional of the last bit given the
    preceding ``r`` bits under those averaged marginals.
    """
    mu = marginals_kernel(bit_probs_from_logits(Tensor(encoder_logits)), r).data.mean(axis=0)
    m0, m1 = mu[:, 0::2], mu[:, 1::2]
    tot = m0 + m1
    q1 = np.clip(np.divide(m1, tot, out=np.full_like(m1, 0.5), where=tot > 0), PROB_MIN, PROB_MAX)
    return float(-(m0 * np.log1p(-q1) + m1 * np.log(q1)).sum())


def order_sweep(
    corpus: Corpus,
    hyper: Hyperparams,
    r_list,
    partial_fraction: float = 0.2,
    batch_size: int = 1024,
    steps: int = 2000,
    lr: float = 0.05,
    prior: str = "table",
) -> tuple[list[dict], dict]:
    """Fit priors of increasing Markov order to a frozen, partially trained BMMI encoder.

    The encoder (order 0) is trained with the brute-force objective for
    ``ceil(partial_fraction * max_epochs)`` epochs, then frozen. On one fixed
    batch of training documents each order in ``r_list`` gets a fresh prior
    optimised with Adam; rows report the best cross entropy reached, the
    exact optimum for that order, and the enumerated mixture entropy.
    """
    r_list = list(r_list)
    if not r_list:
        raise ValueError("r_list is empty")
    if hyper.m > BMMI_MAX_M:
        raise ValueError(f"the sweep needs brute-force entropy, so m <= {BMMI_MAX_M}")
    if prior not in ("table", "network"):
        raise ValueError(f"prior must be 'table' or 'network', got {prior!r}")
    epochs = max(1, math.ceil(partial_fraction * hyper.max_epochs))
    bm = replace(hyper, objective="bmmi", o=0, predictive=False, max_epochs=epochs, patience=epochs)
    trainer = Trainer(corpus, bm)
    trainer.run()
    x = corpus.matrix("train")
    rng = np.random.default_rng([hyper.seed, 7919])
    idx = np.sort(rng.permutation(x.shape[0])[: min(batch_size, x.shape[0])])
    p = trainer.model.encoder_logits(x[idx]).detach()
    reference = float(brute_entropy_batch(p).data)

    rows = []
    for r in r_list:
        if r < 0:
            raise ValueError("orders must be non-negative")
        if prior == "table":
            table = Tensor(init_uniform((hyper.m, 1 << r), hyper.alpha, rng), requires_grad=True, name="table")
            params, logits = {"table": table}, (lambda t=table: t)
        else:
            net = PriorNetwork.build(
                hyper.m, r, hyper.prior_dim, hyper.prior_hidden, hyper.prior_depth, hyper.alpha, rng
            )
            params, logits = net.params(), net.logits
        opt = AdamState(lr)
        best = math.inf
        for _ in range(steps):
            loss = prior_cross_entropy_batch(p, logits()).value
            best = min(best, loss.item())
            adam_step(params, backward(loss, params), opt)
        best = min(best, prior_cross_entropy_batch(p, logits()).value.item())
        optimum = optimal_prior_cross_entropy(p.data, r)
        rows.append(
            {
                "o": 0,
                "r": r,
                "cross_entropy_nats": best,
                "optimum_nats": optimum,
                "reference_nats": reference,
                "cross_entropy_bits": best / LN2,
                "reference_bits": reference / LN2,
            }
        )
    meta = {
        "partial_epochs": epochs,
        "partial_fraction": partial_fraction,
        "batch_size": int(len(idx)),
        "steps": steps,
        "lr": lr,
        "prior": prior,
    }
    return rows, meta


# ---------------------------------------------------------------------------
# hyperparameter search
# ---------------------------------------------------------------------------


def grid_search(
    corpus: Corpus,
    base: Hyperparams,
    grid: dict[str, list],
    mode: str = "grid",
    n_samples: int | None = None,
    seed: int = 0,
) -> list[dict]:
    """Train one model per grid point (or per uniformly sampled point); independent seeds."""
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    if mode == "random":
        rng = np.random.default_rng(seed)
        n = min(n_samples or len(combos), len(combos))
        combos = [combos[i] for i in sorted(rng.choice(len(combos), size=n, replace=False))]
    elif mode != "grid":
        raise ValueError(f"mode must be 'grid' or 'random', got {mode!r}")
    results = []
    for j, combo in enumerate(combos):
        hp = replace(copy.deepcopy(base), **dict(zip(keys, combo)), seed=base.seed + j)
        trainer = Trainer(corpus, hp)
        st = trainer.run()
        results.append({"config": dict(zip(keys, combo)), "seed": hp.seed, "best_score": st.best_score})
    return results
