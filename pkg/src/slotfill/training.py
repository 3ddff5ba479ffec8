"""Training loops: Adam with global-norm clipping, early stopping on dev
chunk F1, JSONL metrics logging, and the three training regimes
(domain-specific, domain-general with optional adversary, joint head).

Determinism: all randomness flows from TrainConfig.seed through spawned
PCG64 streams (model init, dev split, data order/UNK noise, dropout, in
that order), so two runs with equal inputs produce bit-identical
parameters and logs (wall-clock fields aside).
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import encode_and_batch
from .errors import ConfigError, TrainingDiverged
from .metrics import chunk_f1
from .models import (
    JointModel,
    SlotModel,
    encode_corpus_states,
    joint_head,
    predict_labels,
    slot_loss,
    tagger_forward,
    total_loss,
)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    clip_norm: float = 5.0
    dropout: float = 0.5
    lambda_adv: float = 0.0
    max_epochs: int = 50
    patience: int = 3
    dev_fraction: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience", "seed"):
            if not isinstance(getattr(self, name), int):
                raise ConfigError(f"{name} must be an integer, got {getattr(self, name)!r}")
        for name in ("learning_rate", "clip_norm", "dropout", "lambda_adv",
                     "dev_fraction", "adam_beta1", "adam_beta2", "adam_eps"):
            if not isinstance(getattr(self, name), (int, float)):
                raise ConfigError(f"{name} must be a number, got {getattr(self, name)!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lambda_adv < 0:
            raise ConfigError(f"lambda_adv must be >= 0, got {self.lambda_adv}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.dev_fraction < 0.5:
            raise ConfigError(f"dev_fraction must be in (0, 0.5), got {self.dev_fraction}")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ConfigError("adam betas must be in [0, 1)")


def clip_gradients(grads, clip_norm):
    """Global L2-norm clip over a gradient dict.

    If the joint norm exceeds clip_norm, every gradient is scaled by
    clip_norm/norm; otherwise the dict comes back unchanged (bit-exact).
    Returns (grads, pre_clip_norm).
    """
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > clip_norm:
        s = clip_norm / total
        grads = {k: g * s for k, g in grads.items()}
    return grads, total


class Adam:
    """Adam with bias correction over a fixed parameter dict.

    A missing gradient counts as zero; non-finite gradients abort the
    run with the parameter name and batch position.
    """

    def __init__(self, params, config):
        self.params = params
        self.lr = config.learning_rate
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.m = {k: np.zeros(p.data.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.data.shape) for k, p in params.items()}
        self.t = 0

    def step(self, grads, where=""):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = 0.0
            elif not np.all(np.isfinite(g)):
                suffix = f" ({where})" if where else ""
                raise TrainingDiverged(f"non-finite gradient for {name!r}{suffix}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def zero_grads(params):
    for p in params.values():
        p.grad = None


class MetricsLog:
    """Line-delimited JSON records; also kept in memory as `records`."""

    def __init__(self, path=None):
        self.path = path
        self.records = []
        if path is not None:
            with open(path, "w", encoding="utf-8"):
                pass

    def append(self, record):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


@dataclass
class TrainResult:
    model: object
    best_dev_f1: float
    history: list
    train_indices: np.ndarray
    dev_indices: np.ndarray


def _split_dev(n, dev_fraction, rng):
    dev_n = max(1, int(round(dev_fraction * n)))
    if dev_n >= n:
        raise ConfigError(f"corpus of {n} utterances is too small for a dev split")
    perm = rng.permutation(n)
    return np.sort(perm[dev_n:]), np.sort(perm[:dev_n])


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def _fit(trainable, train_set, config, vocab, forward, dev_eval, data_rng,
         dropout_rng, log, unk_noise=True):
    """Shared epoch loop.

    forward(tape, batch, rng) returns a LossBundle for one train-mode
    batch; dev_eval() returns dev F1 under the current parameters.  Keeps
    the best dev-F1 snapshot (ties: the latest), counts patience against
    strict improvements, and restores the snapshot before returning it.
    """
    adam = Adam(trainable, config)
    best_f1 = -1.0
    best_snapshot = None
    bad_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        batches = encode_and_batch(
            train_set, vocab, config.batch_size, rng=data_rng, shuffle=True,
            train=unk_noise,
        )
        slot_sum = domain_sum = 0.0
        domain_seen = False
        norm_max = 0.0
        for bi, batch in enumerate(batches):
            tape = ad.Tape()
            bundle = forward(tape, batch, dropout_rng)
            tape.backward(bundle.total)
            grads = {
                k: (p.grad if p.grad is not None else np.zeros(p.data.shape))
                for k, p in trainable.items()
            }
            grads, pre_norm = clip_gradients(grads, config.clip_norm)
            adam.step(grads, where=f"epoch {epoch} batch {bi}")
            zero_grads(trainable)
            slot_sum += float(bundle.slot.data)
            if bundle.domain is not None:
                domain_sum += float(bundle.domain.data)
                domain_seen = True
            norm_max = max(norm_max, min(pre_norm, config.clip_norm))
        dev_f1 = dev_eval()
        seconds = time.perf_counter() - started
        nb = max(1, len(batches))
        log.append({
            "epoch": epoch, "split": "train",
            "slot_loss": slot_sum / nb,
            "domain_loss": (domain_sum / nb) if domain_seen else None,
            "f1": None, "probe_accuracy": None,
            "grad_norm_max": norm_max, "seconds": round(seconds, 3),
        })
        log.append({
            "epoch": epoch, "split": "dev",
            "slot_loss": None, "domain_loss": None,
            "f1": dev_f1, "probe_accuracy": None,
            "grad_norm_max": None, "seconds": None,
        })
        if dev_f1 >= best_f1:
            if dev_f1 > best_f1:
                bad_epochs = 0
            else:
                bad_epochs += 1
            best_f1 = dev_f1
            best_snapshot = {k: p.data.copy() for k, p in trainable.items()}
        else:
            bad_epochs += 1
        if bad_epochs >= config.patience:
            break
    if best_snapshot is not None:
        for k, p in trainable.items():
            p.data = best_snapshot[k]
    return best_f1


def _finish_tagger(model, utterances, vocab, config, split_rng, data_rng,
                   dropout_rng, log_path):
    train_idx, dev_idx = _split_dev(len(utterances), config.dev_fraction, split_rng)
    train_set = [utterances[i] for i in train_idx]
    dev_set = [utterances[i] for i in dev_idx]
    log = MetricsLog(log_path)
    lam = config.lambda_adv

    def forward(tape, batch, rng):
        bundle, _ = tagger_forward(
            tape, model, batch, train=True, rng=rng, lambda_adv=lam
        )
        return bundle

    def dev_eval():
        return chunk_f1(dev_set, predict_labels(model, dev_set)).overall.f1

    best = _fit(
        model.parameters(), train_set, config, vocab, forward, dev_eval,
        data_rng, dropout_rng, log,
    )
    return TrainResult(model, best, log.records, train_idx, dev_idx)


def train_specific(train_utterances, vocab, model_config, train_config, log_path=None):
    """Train a single-domain tagger on the slot loss alone."""
    train_utterances = list(train_utterances)
    domains = {u.domain for u in train_utterances}
    if len(domains) != 1:
        raise ConfigError(
            f"specific regime needs a single-domain corpus, got {sorted(domains)}"
        )
    if train_config.lambda_adv != 0.0:
        raise ConfigError("specific regime has no adversary; set lambda_adv = 0")
    init_rng, split_rng, data_rng, dropout_rng = _streams(train_config.seed)
    model = SlotModel(model_config, vocab, "specific", init_rng)
    return _finish_tagger(
        model, train_utterances, vocab, train_config, split_rng, data_rng,
        dropout_rng, log_path,
    )


def train_general(train_utterances, vocab, model_config, train_config, log_path=None):
    """Train a shared tagger over all domains.

    lambda_adv = 0 builds no domain branch; lambda_adv > 0 adds the
    adversarial domain classifier behind gradient reversal and requires
    at least two domains.
    """
    train_utterances = list(train_utterances)
    lam = train_config.lambda_adv
    if lam > 0 and vocab.num_domains < 2:
        raise ConfigError("adversary requires >= 2 domains")
    kind = "general-adv" if lam > 0 else "general"
    init_rng, split_rng, data_rng, dropout_rng = _streams(train_config.seed)
    model = SlotModel(model_config, vocab, kind, init_rng)
    return _finish_tagger(
        model, train_utterances, vocab, train_config, split_rng, data_rng,
        dropout_rng, log_path,
    )


def train_joint(specific, general, train_utterances, train_config,
                mlp_hidden_dim=None, log_path=None):
    """Train the joint output MLP over two frozen encoders.

    Encoder states are precomputed once in eval mode, and the MLP trains
    on the cached features; only MLP parameters enter the optimizer.
    Batches carry no UNK noise because the frozen features were cached
    from the raw tokens.
    """
    train_utterances = list(train_utterances)
    domains = {u.domain for u in train_utterances}
    if len(domains) != 1:
        raise ConfigError(
            f"joint regime needs a single-domain corpus, got {sorted(domains)}"
        )
    init_rng, split_rng, data_rng, dropout_rng = _streams(train_config.seed)
    joint = JointModel(
        specific, general, init_rng, mlp_hidden_dim=mlp_hidden_dim,
        dropout_rate=train_config.dropout,
    )
    train_idx, dev_idx = _split_dev(
        len(train_utterances), train_config.dev_fraction, split_rng
    )
    train_set = [train_utterances[i] for i in train_idx]
    dev_set = [train_utterances[i] for i in dev_idx]
    log = MetricsLog(log_path)
    train_states = encode_corpus_states(joint, train_set)
    dev_states = encode_corpus_states(joint, dev_set)
    width = train_states[0].shape[-1]
    label_names = joint.vocab.labels

    def pad_states(cache, batch):
        h = np.zeros((batch.size, batch.t_max, width))
        for r, i in enumerate(batch.indices):
            s = cache[int(i)]
            h[r, : s.shape[0]] = s
        return h

    def forward(tape, batch, rng):
        states = ad.Tensor(pad_states(train_states, batch))
        probs = joint_head(tape, joint, states, train=True, rng=rng)
        ly = slot_loss(tape, probs, batch.label_ids, batch.mask)
        return total_loss(tape, ly, None, 0.0)

    def dev_eval():
        preds = []
        for batch in encode_and_batch(dev_set, joint.vocab, 64):
            tape = ad.Tape()
            probs = joint_head(tape, joint, ad.Tensor(pad_states(dev_states, batch)))
            ids = probs.data.argmax(axis=-1)
            for r in range(batch.size):
                n = int(batch.lengths[r])
                preds.append([label_names[i] for i in ids[r, :n]])
        return chunk_f1(dev_set, preds).overall.f1

    best = _fit(
        joint.parameters(), train_set, train_config, joint.vocab, forward,
        dev_eval, data_rng, dropout_rng, log, unk_noise=False,
    )
    return TrainResult(joint, best, log.records, train_idx, dev_idx)
