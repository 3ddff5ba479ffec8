"""Command-line interface.

Subcommands: train (JSON config, one of four regimes), eval (checkpoint
against labelled test files), predict (tokens in, BIO out), synth
(generate corpora).  Exit codes: 0 success, 2 config/data problems,
3 training divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import build_vocab, read_bio, write_bio
from .errors import ConfigError, DataError, TrainingDiverged
from .metrics import chunk_f1
from .models import ModelConfig, predict_labels
from .synth import GrammarSpec, generate, standard_suite
from .training import TrainConfig, train_general, train_joint, train_specific

CONFIG_SCHEMA_VERSION = 1

_REGIMES = ("specific", "general", "general-adv", "joint")
_TOP_KEYS = {
    "schema_version", "regime", "corpora", "test_corpora", "target_domain",
    "specific_ckpt", "general_ckpt", "out_dir", "model", "train",
}
_MODEL_KEYS = {"embedding_dim", "hidden_dim", "mlp_hidden_dim", "dropout_rate"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_CORPUS_KEYS = {"path", "domain"}


def _reject_unknown(d, allowed, where):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "config")
    if cfg.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {CONFIG_SCHEMA_VERSION}, "
            f"got {cfg.get('schema_version')!r}"
        )
    regime = cfg.get("regime")
    if regime not in _REGIMES:
        raise ConfigError(f"regime must be one of {_REGIMES}, got {regime!r}")
    corpora = cfg.get("corpora")
    if not isinstance(corpora, list) or not corpora:
        raise ConfigError("corpora must be a non-empty list")
    for entry in corpora + list(cfg.get("test_corpora") or []):
        if not isinstance(entry, dict):
            raise ConfigError("corpus entries must be objects with path and domain")
        _reject_unknown(entry, _CORPUS_KEYS, "corpus entry")
        if "path" not in entry or "domain" not in entry:
            raise ConfigError("corpus entries need both path and domain")
    _reject_unknown(cfg.get("model") or {}, _MODEL_KEYS, "model")
    _reject_unknown(cfg.get("train") or {}, _TRAIN_KEYS, "train")
    return cfg


def _read_corpora(entries):
    out = []
    for entry in entries:
        out.append((entry["domain"], read_bio(entry["path"], entry["domain"])))
    return out


def _format_result(result, regime):
    return (
        f"trained regime={regime} epochs={result.history[-1]['epoch']} "
        f"best_dev_f1={result.best_dev_f1:.2f}"
    )


def cmd_train(args):
    cfg = _load_config(args.config)
    train_over = dict(cfg.get("train") or {})
    if args.seed is not None:
        train_over["seed"] = args.seed
    train_config = TrainConfig(**train_over)
    out_dir = args.out or cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    regime = cfg["regime"]
    corpora = _read_corpora(cfg["corpora"])
    all_utts = [u for _, utts in corpora for u in utts]
    model_over = dict(cfg.get("model") or {})
    log_path = out_dir / "metrics.jsonl"

    if regime in ("general", "general-adv"):
        if regime == "general" and train_config.lambda_adv != 0.0:
            raise ConfigError("regime general requires lambda_adv = 0")
        if regime == "general-adv" and train_config.lambda_adv <= 0.0:
            raise ConfigError("regime general-adv requires lambda_adv > 0")
        vocab = build_vocab(all_utts)
        model_config = ModelConfig.for_vocab(
            vocab, lambda_adv=train_config.lambda_adv,
            dropout_rate=model_over.pop("dropout_rate", train_config.dropout),
            **model_over,
        )
        result = train_general(all_utts, vocab, model_config, train_config, log_path)
    elif regime == "specific":
        target = cfg.get("target_domain")
        if not target:
            raise ConfigError("regime specific requires target_domain")
        target_utts = [u for u in all_utts if u.domain == target]
        if not target_utts:
            raise ConfigError(f"no corpus utterances for target_domain {target!r}")
        vocab = build_vocab(target_utts, word_source=all_utts)
        model_config = ModelConfig.for_vocab(
            vocab,
            dropout_rate=model_over.pop("dropout_rate", train_config.dropout),
            **model_over,
        )
        result = train_specific(target_utts, vocab, model_config, train_config, log_path)
    else:  # joint
        if not cfg.get("specific_ckpt") or not cfg.get("general_ckpt"):
            raise ConfigError("regime joint requires specific_ckpt and general_ckpt")
        target = cfg.get("target_domain")
        if not target:
            raise ConfigError("regime joint requires target_domain")
        target_utts = [u for u in all_utts if u.domain == target]
        if not target_utts:
            raise ConfigError(f"no corpus utterances for target_domain {target!r}")
        specific = load_checkpoint(cfg["specific_ckpt"])
        general = load_checkpoint(cfg["general_ckpt"])
        result = train_joint(
            specific, general, target_utts, train_config,
            mlp_hidden_dim=model_over.get("mlp_hidden_dim"), log_path=log_path,
        )

    model = result.model
    save_checkpoint(out_dir / "model.ckpt", model)
    (out_dir / "vocab.txt").write_text(model.vocab.dump_text(), encoding="utf-8")
    print(_format_result(result, regime))

    test_entries = cfg.get("test_corpora") or []
    if test_entries:
        report = _evaluate(model, _read_corpora(test_entries))
        (out_dir / "eval.txt").write_text(report.format(), encoding="utf-8")
        print(report.format(), end="")
    return 0


def _evaluate(model, corpora):
    label_set = set(model.vocab.labels)
    gold = []
    for domain, utts in corpora:
        for u in utts:
            missing = sorted(set(u.labels) - label_set)
            if missing:
                raise ConfigError(
                    f"label-set mismatch: test labels {missing} unknown to the model"
                )
        gold.extend(utts)
    return chunk_f1(gold, predict_labels(model, gold))


def _parse_test_args(pairs):
    out = []
    for item in pairs:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = Path(item).stem, item
        if not name or not path:
            raise ConfigError(f"bad test spec {item!r}; use NAME=PATH")
        out.append((name, path))
    return out


def cmd_eval(args):
    model = load_checkpoint(args.ckpt)
    corpora = [(name, read_bio(path, name)) for name, path in _parse_test_args(args.test)]
    report = _evaluate(model, corpora)
    text = report.format()
    out_path = Path(args.out) if args.out else Path(str(args.ckpt) + ".eval.txt")
    out_path.write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _read_token_blocks(path):
    """Blank-line-separated token blocks, one token per line.

    A blank line with no tokens gathered yet (beyond the single separator
    after a block) marks an empty utterance block: skipped with a warning.
    """
    blocks = []
    current = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.strip()
            if tok:
                current.append(tok)
            elif current:
                blocks.append(current)
                current = []
            else:
                print(
                    f"warning: {path}: skipping empty utterance block",
                    file=sys.stderr,
                )
    if current:
        blocks.append(current)
    return blocks


def cmd_predict(args):
    model = load_checkpoint(args.ckpt)
    blocks = _read_token_blocks(args.infile)
    if not blocks:
        Path(args.outfile).write_text("", encoding="utf-8")
        return 0
    from .data import Utterance

    utts = [Utterance(toks, ["O"] * len(toks), "input") for toks in blocks]
    preds = predict_labels(model, utts)
    out_blocks = []
    for toks, labs in zip(blocks, preds):
        out_blocks.append("\n".join(f"{t}\t{l}" for t, l in zip(toks, labs)))
    Path(args.outfile).write_text("\n\n".join(out_blocks) + "\n", encoding="utf-8")
    return 0


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_synth(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if args.suite:
        suite = standard_suite(args.seed)
        for domain in suite.domains:
            for split, utts in (("train", suite.train[domain]), ("test", suite.test[domain])):
                path = out_dir / f"{domain}_{split}.bio"
                write_bio(utts, path)
                files.append({
                    "path": path.name, "domain": domain, "split": split,
                    "utterances": len(utts), "sha256": _sha256(path),
                })
    else:
        with open(args.spec, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.spec}: invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{args.spec}: spec must be a JSON object")
        n_train = d.pop("n_train", 2000)
        n_test = d.pop("n_test", 400)
        d.pop("schema_version", None)
        spec = GrammarSpec.from_dict(d)
        children = np.random.SeedSequence(args.seed).spawn(2)
        for split, n, child in (("train", n_train, children[0]), ("test", n_test, children[1])):
            utts = generate(spec, n, np.random.Generator(np.random.PCG64(child)))
            path = out_dir / f"{spec.domain_name}_{split}.bio"
            write_bio(utts, path)
            files.append({
                "path": path.name, "domain": spec.domain_name, "split": split,
                "utterances": len(utts), "sha256": _sha256(path),
            })
    manifest = {"schema_version": 1, "seed": args.seed, "files": files}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(files)} corpus files to {out_dir}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="slotfill",
        description="Multi-domain BIO slot filling with adversarial Bi-LSTM taggers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--out", default=None, help="override out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labelled BIO files")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--out", default=None, help="report path (default <ckpt>.eval.txt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="tag token sequences with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate synthetic BIO corpora")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--suite", action="store_true", help="standard four-domain suite")
    group.add_argument("--spec", default=None, help="single grammar spec JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
