"""Feedforward encoders, the embedding-dictionary prior, Adam, and checkpoints."""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, as_tensor, sparse_matmul
from .markov import LOGIT_MAX

CHECKPOINT_VERSION = 1

__all__ = [
    "init_uniform",
    "Layer",
    "FeedForward",
    "EmbeddingDictionary",
    "PriorNetwork",
    "forward_network",
    "AdamState",
    "adam_step",
    "clip_by_global_norm",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]


def init_uniform(shape, alpha: float, rng: np.random.Generator | int) -> np.ndarray:
    """iid Unif(-alpha, alpha) entries."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    rng = np.random.default_rng(rng)
    return rng.uniform(-alpha, alpha, size=shape) if alpha > 0 else np.zeros(shape)


@dataclass
class Layer:
    weight: Tensor
    bias: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class FeedForward:
    """Affine layers with ReLU or identity activations and an optional final sigmoid.

    ``logits`` returns the pre-sigmoid output; the first layer accepts a
    scipy sparse batch as well as a dense one.
    """

    layers: list[Layer]
    sigmoid: bool = True
    collection: str = "psi"

    @classmethod
    def build(
        cls,
        sizes: list[int],
        alpha: float,
        rng: np.random.Generator,
        collection: str = "psi",
        sigmoid: bool = True,
    ) -> "FeedForward":
        layers = []
        for k, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            layers.append(
                Layer(
                    Tensor(init_uniform((d_in, d_out), alpha, rng), requires_grad=True),
                    Tensor(init_uniform((d_out,), alpha, rng), requires_grad=True),
                    "identity" if last else "relu",
                )
            )
        net = cls(layers, sigmoid, collection)
        net._name_params()
        return net

    def _name_params(self) -> None:
        for k, layer in enumerate(self.layers):
            layer.weight.name = f"{self.collection}.{k}.weight"
            layer.bias.name = f"{self.collection}.{k}.bias"

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def params(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            out[layer.weight.name] = layer.weight
            out[layer.bias.name] = layer.bias
        return out

    def logits(self, x) -> Tensor:
        dim = x.shape[-1]
        if dim != self.in_dim:
            raise ValueError(f"input dimension {dim} does not match first layer {self.in_dim}")
        h = x
        for k, layer in enumerate(self.layers):
            if k == 0 and sp.issparse(h):
                h = sparse_matmul(h, layer.weight) + layer.bias
            else:
                h = as_tensor(h) @ layer.weight + layer.bias
            if layer.activation == "relu":
                h = h.relu()
        return h


def forward_network(net: FeedForward, x) -> Tensor:
    """Network output; with the sigmoid flag set, probabilities clamped to the Markov table range."""
    out = net.logits(x)
    if net.sigmoid:
        out = out.clip(-LOGIT_MAX, LOGIT_MAX).sigmoid()
    return out


@dataclass
class EmbeddingDictionary:
    """Learnable ``m x H`` matrix."""

    theta: Tensor

    @property
    def dim(self) -> int:
        return self.theta.shape[1]


@dataclass
class PriorNetwork:
    """Variational prior: mean-pooled embedding rows through a ReLU network to ``m * 2**r`` logits."""

    embedding: EmbeddingDictionary
    net: FeedForward
    m: int
    r: int

    @classmethod
    def build(
        cls, m: int, r: int, dim: int, hidden: int, depth: int, alpha: float, rng: np.random.Generator
    ) -> "PriorNetwork":
        theta = Tensor(init_uniform((m, dim), alpha, rng), requires_grad=True, name="theta.embedding")
        net = FeedForward.build([dim] + [hidden] * depth + [m << r], alpha, rng, collection="theta")
        return cls(EmbeddingDictionary(theta), net, m, r)

    def params(self) -> dict[str, Tensor]:
        return {self.embedding.theta.name: self.embedding.theta, **self.net.params()}

    def logits(self) -> Tensor:
        pooled = self.embedding.theta.mean(axis=0, keepdims=True)
        return self.net.logits(pooled).reshape(self.m, 1 << self.r)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def adam_step(
    params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float | None = None
) -> None:
    """One bias-corrected Adam update, in place on ``params[name].data``."""
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name].data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


class CheckpointError(ValueError):
    """Corrupted, mismatched, or unreadable checkpoint."""


def _digest(arrays: dict[str, np.ndarray], meta: str) -> str:
    h = hashlib.sha256(meta.encode())
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    optimizers: dict[str, AdamState],
    config_hash: str,
    extra: dict | None = None,
    arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a ``.npz`` container.

    Layout: ``param/<name>`` arrays, ``adam/<group>/{m,v}/<name>`` moments,
    any ``extra/<name>`` arrays, and a ``__meta__`` JSON string holding the
    format version, config hash, Adam scalars and step counters, the
    caller's ``extra`` dict, and a SHA-256 digest over everything else.
    """
    blobs: dict[str, np.ndarray] = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    opt_meta = {}
    for group, st in optimizers.items():
        opt_meta[group] = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "t": st.t}
        for k, v in st.m.items():
            blobs[f"adam/{group}/m/{k}"] = v
        for k, v in st.v.items():
            blobs[f"adam/{group}/v/{k}"] = v
    for k, v in (arrays or {}).items():
        blobs[f"extra/{k}"] = np.asarray(v)
    meta = json.dumps(
        {"version": CHECKPOINT_VERSION, "config_hash": config_hash, "adam": opt_meta, "extra": extra or {}},
        sort_keys=True,
    )
    digest = _digest(blobs, meta)
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(meta), __digest__=np.array(digest), **blobs)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path, expected_config_hash: str | None = None) -> dict:
    """Read a container written by :func:`save_checkpoint`.

    Returns a dict with keys ``params``, ``optimizers``, ``config_hash``,
    ``extra`` and ``arrays``.
    """
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            files = {k: z[k] for k in z.files}
    except Exception as exc:  # zip/format errors surface in many types
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in files or "__digest__" not in files:
        raise CheckpointError(f"{path} is not an ammi checkpoint")
    meta_text = str(files.pop("__meta__"))
    digest = str(files.pop("__digest__"))
    if _digest(files, meta_text) != digest:
        raise CheckpointError(f"integrity check failed for {path}")
    meta = json.loads(meta_text)
    if meta["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta['version']}")
    if expected_config_hash is not None and meta["config_hash"] != expected_config_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {meta['config_hash']} vs expected {expected_config_hash}"
        )
    params, arrays = {}, {}
    optimizers = {g: AdamState(**kw) for g, kw in meta["adam"].items()}
    for key, value in files.items():
        kind, _, rest = key.partition("/")
        if kind == "param":
            params[rest] = value
        elif kind == "extra":
            arrays[rest] = value
        elif kind == "adam":
            group, which, name = rest.split("/", 2)
            getattr(optimizers[group], which)[name] = value.copy()
    return {
        "params": params,
        "optimizers": optimizers,
        "config_hash": meta["config_hash"],
        "extra": meta["extra"],
        "arrays": arrays,
    }
