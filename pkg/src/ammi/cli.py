"""Command-line entry points.

Exit codes: 0 success, 1 a check failed, 2 usage or data error.

Config files are flat YAML mappings whose keys are the :class:`Hyperparams`
fields plus ``corpus`` (a corpus directory) and ``vocab_size``. Repeated
``--set KEY=VALUE`` flags override single keys; values are parsed as YAML
scalars.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
import scipy
import yaml

from .corpus import (
    build_tfidf,
    load_corpus,
    prototype_clusters,
    save_corpus,
    synthetic_pairs,
    synthetic_topics,
    tfidf_matrix,
)
from .markov import BitVector
from .model import encode_matrix
from .nn import CheckpointError
from .oracle import run_suites
from .retrieval import CodeIndex, drift_report, format_drift, write_codes
from .training import Hyperparams, Trainer, evaluate, order_sweep

DATA_KEYS = ("corpus", "vocab_size")
HYPER_KEYS = tuple(f.name for f in fields(Hyperparams))
EPOCH_COLUMNS = ("epoch", "encoder_loss", "prior_loss", "surrogate_nats", "surrogate_bits", "val_score")
SWEEP_COLUMNS = ("o", "r", "cross_entropy_nats", "cross_entropy_bits", "optimum_nats", "reference_nats", "reference_bits")


class UsageError(Exception):
    """Bad flags, config or data; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def load_config(path: str | None, overrides: list[str], seed: int | None) -> dict:
    cfg: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise UsageError(f"config {path} must be a key-value mapping")
        cfg.update(loaded or {})
        if "corpus" in cfg and cfg["corpus"] is not None and not Path(str(cfg["corpus"])).is_absolute():
            cfg["corpus"] = str((Path(path).parent / str(cfg["corpus"])).resolve())
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        cfg[key.strip()] = yaml.safe_load(value)
    if seed is not None:
        cfg["seed"] = seed
    unknown = set(cfg) - set(HYPER_KEYS) - set(DATA_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def split_config(cfg: dict) -> tuple[Hyperparams, dict]:
    try:
        hyper = Hyperparams.from_dict({k: v for k, v in cfg.items() if k in HYPER_KEYS}).validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid hyperparameters: {exc}") from None
    return hyper, {k: cfg.get(k) for k in DATA_KEYS}


def config_hash(hyper: Hyperparams, data: dict) -> str:
    payload = {"hyper": hyper.to_dict(), "data": data}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def open_corpus(data: dict):
    if not data.get("corpus"):
        raise UsageError("config key 'corpus' (a corpus directory) is required")
    try:
        return load_corpus(data["corpus"], data.get("vocab_size"))
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load corpus {data['corpus']}: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(out: Path, rows: list[dict], columns) -> None:
    """``metrics.csv`` and its ``metrics.json`` mirror; deterministic bytes for identical rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    (out / "metrics.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out / "metrics.json").write_text(
        json.dumps([{c: row[c] for c in columns} for row in rows], indent=2) + "\n", encoding="utf-8"
    )


def write_run_info(out: Path, command: str, cfg_hash: str | None, extra: dict) -> None:
    info = {
        "command": command,
        "config_hash": cfg_hash,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }
    (out / "run-info.json").write_text(json.dumps(info, indent=2, default=float) + "\n", encoding="utf-8")


def _out_dir(path: str | None) -> Path:
    if path is None:
        raise UsageError("--out DIR is required")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _load_trainer(args, corpus, hyper, data) -> Trainer:
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        trainer = Trainer.load(args.checkpoint, corpus, config_hash(hyper, data))
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    return trainer


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    hyper, data = split_config(cfg)
    out = _out_dir(args.out)
    corpus = open_corpus(data)
    h = config_hash(hyper, data)
    ckpt = out / "checkpoint.npz"
    trainer = _load_trainer(args, corpus, hyper, data) if args.checkpoint else Trainer(corpus, hyper)
    try:
        trainer.run(on_epoch=lambda t: t.save(ckpt, h))
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    trainer.save(ckpt, h)
    write_table(out, trainer.state.history, EPOCH_COLUMNS)
    write_run_info(
        out,
        "train",
        h,
        {"config": {**hyper.to_dict(), **data}, "epoch_seconds": trainer.epoch_seconds, "best_epoch": trainer.state.best_epoch},
    )
    print(f"trained {trainer.state.epoch} epochs; best validation score {trainer.state.best_score:.4f} at epoch {trainer.state.best_epoch}")
    print(f"config hash {h}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    hyper, data = split_config(cfg)
    corpus = open_corpus(data)
    trainer = _load_trainer(args, corpus, hyper, data)
    try:
        report = evaluate(trainer.model, corpus, args.k, args.split)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if "precision" in report:
        print(f"top-{args.k} precision ({args.split}): {report['precision']:.4f}")
    if "pair_precision" in report:
        print(f"pair-matching precision@{args.k} ({args.split}): {report['pair_precision']:.4f}")
    print(f"distinct codes on train: {report['distinct_codes']} of {report['train_docs']} documents")
    usage = np.asarray(report["bit_usage"])
    print(f"bit usage: min {usage.min():.3f} mean {usage.mean():.3f} max {usage.max():.3f}")
    if args.out:
        out = _out_dir(args.out)
        row = {k: report.get(k, float("nan")) for k in ("split", "k", "precision", "pair_precision", "distinct_codes")}
        write_table(out, [row], list(row))
        (out / "eval.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        write_run_info(out, "eval", config_hash(hyper, data), {"checkpoint": str(args.checkpoint)})
    return 0


def cmd_oracle_check(args) -> int:
    if args.max_m > 20 or args.max_m < 1:
        raise UsageError("--max-m must be in [1, 20]")
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    if args.trials == 0:
        print("warning: trials=0, no cases checked (vacuous pass)", file=sys.stderr)
    rep = run_suites(args.max_m, args.max_order, args.trials, args.seed or 0, inject_bug=args.inject_bug)
    print(f"checked {rep.cases} cases")
    for name, err in sorted(rep.max_err.items()):
        print(f"  {name:28s} max rel err {err:.3e}")
    if rep.failures:
        print(f"{len(rep.failures)} failing cases:", file=sys.stderr)
        for line in rep.failures[:50]:
            print(f"  {line}", file=sys.stderr)
        return 1
    print("all within tolerance")
    return 0


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from None
    return vals


def cmd_order_sweep(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    hyper, data = split_config(cfg)
    r_list = _parse_int_list(args.r_list, "--r-list")
    if not r_list:
        raise UsageError("--r-list is empty")
    out = _out_dir(args.out)
    corpus = open_corpus(data)
    try:
        rows, meta = order_sweep(corpus, hyper, r_list, partial_fraction=args.partial_fraction, steps=args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_table(out, rows, SWEEP_COLUMNS)
    write_run_info(out, "order-sweep", config_hash(hyper, data), {"sweep": meta})
    for row in rows:
        print(f"r={row['r']}: cross entropy {row['cross_entropy_bits']:.4f} bits (reference {row['reference_bits']:.4f})")
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args.out)
    seed = args.seed or 0
    if args.kind == "topics":
        raw = synthetic_topics(seed=seed)
    elif args.kind == "pairs":
        raw = synthetic_pairs(seed=seed)
    else:
        raw = prototype_clusters(seed=seed)
    save_corpus(build_tfidf(raw, args.vocab_size), out)
    print(f"wrote {args.kind} corpus to {out}: " + ", ".join(f"{k}={len(v)}" for k, v in raw.items()))
    return 0


def cmd_encode(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    hyper, data = split_config(cfg)
    corpus = open_corpus(data)
    trainer = _load_trainer(args, corpus, hyper, data)
    if args.split not in corpus.splits:
        raise UsageError(f"no split {args.split!r} in the corpus")
    docs = corpus.docs(args.split)
    bits = encode_matrix(trainer.model, corpus.matrix(args.split))
    if args.out is None:
        raise UsageError("--out PATH is required")
    write_codes(args.out, [d.id for d in docs], bits)
    print(f"wrote {len(docs)} codes to {args.out}")
    return 0


def cmd_drift(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    hyper, data = split_config(cfg)
    corpus = open_corpus(data)
    trainer = _load_trainer(args, corpus, hyper, data)
    try:
        doc = corpus.get(args.query)
    except KeyError:
        raise UsageError(f"unknown document id {args.query!r}") from None
    docs = corpus.docs(args.index_split)
    index = CodeIndex.from_bits([d.id for d in docs], encode_matrix(trainer.model, corpus.matrix(args.index_split)))
    query = BitVector(encode_matrix(trainer.model, tfidf_matrix([doc], corpus.vocab_size))[0])
    thresholds = _parse_int_list(args.thresholds, "--thresholds")
    try:
        rows = drift_report(query, index, thresholds, exclude_id=doc.id)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(format_drift(doc.id, rows, as_json=args.json))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, config: bool = True, checkpoint: bool = False) -> None:
    if config:
        p.add_argument("--config", metavar="PATH", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", metavar="DIR", help="output location")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    if checkpoint:
        p.add_argument("--checkpoint", metavar="PATH", help="checkpoint file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ammi", description="Discrete document hashing by adversarial MMI.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder; writes checkpoint and per-epoch metrics")
    _common(p, checkpoint=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics of a checkpoint")
    _common(p, checkpoint=True)
    p.add_argument("--k", type=int, default=100, help="neighbours per query (default 100)")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="dynamic programs and gradients against brute-force oracles")
    _common(p, config=False)
    p.add_argument("--max-m", type=int, default=12)
    p.add_argument("--max-order", type=int, default=3)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("order-sweep", help="prior cross entropy against Markov order r")
    _common(p)
    p.add_argument("--r-list", default="0,1,2,3,4", metavar="a,b,c")
    p.add_argument("--partial-fraction", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=2000, help="Adam steps per prior fit")
    p.set_defaults(func=cmd_order_sweep)

    p = sub.add_parser("synth", help="write a synthetic corpus directory")
    _common(p, config=False)
    p.add_argument("--kind", choices=("topics", "pairs", "clusters"), default="topics")
    p.add_argument("--vocab-size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="write id<TAB>hex codes for one split")
    _common(p, checkpoint=True)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("drift", help="nearest documents beyond increasing Hamming distances")
    _common(p, checkpoint=True)
    p.add_argument("--query", required=True, help="document id")
    p.add_argument("--thresholds", default="1,5,10")
    p.add_argument("--index-split", default="train")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_drift)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
