"""Bi-LSTM slot taggers, the adversarial domain branch, and the
frozen-encoder joint model.

All forward functions take an explicit Tape; prediction helpers run on a
scratch tape in eval mode.  Padded positions never influence any loss or
any real position's state: the recurrence is gated by the batch mask and
attention weights at padded positions are exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import batch_tokens, encode_and_batch
from .errors import ConfigError, DataError, ShapeError

KINDS = ("specific", "general", "general-adv")


@dataclass
class ModelConfig:
    """Sizes and rates for one tagger."""

    vocab_size: int
    num_slot_labels: int
    num_domains: int
    embedding_dim: int = 128
    hidden_dim: int = 128
    mlp_hidden_dim: int = 128
    dropout_rate: float = 0.5
    lambda_adv: float = 0.0

    def __post_init__(self):
        for name in ("vocab_size", "num_slot_labels", "num_domains",
                     "embedding_dim", "hidden_dim", "mlp_hidden_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.lambda_adv < 0.0:
            raise ConfigError(f"lambda_adv must be >= 0, got {self.lambda_adv}")

    @classmethod
    def for_vocab(cls, vocab, **overrides):
        return cls(
            vocab_size=vocab.num_words,
            num_slot_labels=vocab.num_labels,
            num_domains=vocab.num_domains,
            **overrides,
        )


def glorot(rng, shape):
    """Glorot-uniform sample; fans are the first and last axis sizes."""
    limit = math.sqrt(6.0 / (shape[0] + shape[-1]))
    return rng.uniform(-limit, limit, size=shape)


def _param(rng, shape):
    if rng is None:
        return ad.Tensor(np.zeros(shape), requires_grad=True)
    return ad.Tensor(glorot(rng, shape), requires_grad=True)


def _lstm_bias(hidden_dim):
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate starts open
    return b


class SlotModel:
    """Parameter store for one tagger.

    Kind "general-adv" additionally owns the attention scorer and the
    domain classification head; those two groups together are the
    adversary's parameters.  Passing rng=None leaves all parameters
    zero (used by the checkpoint loader, which overwrites them).
    """

    def __init__(self, config, vocab, kind, rng):
        if kind not in KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        if config.vocab_size != vocab.num_words:
            raise ConfigError(
                f"config vocab_size {config.vocab_size} != vocabulary {vocab.num_words}"
            )
        if config.num_slot_labels != vocab.num_labels:
            raise ConfigError(
                f"config num_slot_labels {config.num_slot_labels} != vocabulary {vocab.num_labels}"
            )
        if config.num_domains != vocab.num_domains:
            raise ConfigError(
                f"config num_domains {config.num_domains} != vocabulary {vocab.num_domains}"
            )
        self.config = config
        self.vocab = vocab
        self.kind = kind
        e, h, m = config.embedding_dim, config.hidden_dim, config.mlp_hidden_dim
        p = {}
        p["embedding"] = _param(rng, (config.vocab_size, e))
        for d in ("fw", "bw"):
            p[f"lstm_{d}.wx"] = _param(rng, (e, 4 * h))
            p[f"lstm_{d}.wh"] = _param(rng, (h, 4 * h))
            p[f"lstm_{d}.b"] = ad.Tensor(_lstm_bias(h), requires_grad=True)
        p["slot_head.w1"] = _param(rng, (2 * h, m))
        p["slot_head.b1"] = ad.Tensor(np.zeros(m), requires_grad=True)
        p["slot_head.w2"] = _param(rng, (m, config.num_slot_labels))
        p["slot_head.b2"] = ad.Tensor(np.zeros(config.num_slot_labels), requires_grad=True)
        if kind == "general-adv":
            p["attn.w"] = _param(rng, (2 * h, 1))
            p["attn.b"] = ad.Tensor(np.zeros(1), requires_grad=True)
            p["domain_head.w1"] = _param(rng, (2 * h, m))
            p["domain_head.b1"] = ad.Tensor(np.zeros(m), requires_grad=True)
            p["domain_head.w2"] = _param(rng, (m, config.num_domains))
            p["domain_head.b2"] = ad.Tensor(np.zeros(config.num_domains), requires_grad=True)
        self.params = p
        self.lstm_fw = ad.LstmParams(p["lstm_fw.wx"], p["lstm_fw.wh"], p["lstm_fw.b"])
        self.lstm_bw = ad.LstmParams(p["lstm_bw.wx"], p["lstm_bw.wh"], p["lstm_bw.b"])

    @property
    def adversarial(self):
        return "attn.w" in self.params

    def parameters(self):
        return self.params

    def theta_s(self):
        """Encoder parameters: embedding plus both LSTM directions."""
        return {
            k: v
            for k, v in self.params.items()
            if k == "embedding" or k.startswith("lstm_")
        }

    def theta_y(self):
        """Slot head parameters."""
        return {k: v for k, v in self.params.items() if k.startswith("slot_head.")}

    def theta_d(self):
        """Adversary parameters: attention scorer plus domain head."""
        return {
            k: v
            for k, v in self.params.items()
            if k.startswith("attn.") or k.startswith("domain_head.")
        }


def _run_direction(tape, emb, mask, lstm, reverse):
    b, t_max, e = emb.shape
    h_dim = lstm.hidden_dim
    flat = tape.reshape(emb, (b * t_max, e))
    pre_x = tape.add(tape.matmul(flat, lstm.wx), lstm.b)
    pre_x = tape.reshape(pre_x, (b, t_max, 4 * h_dim))
    h = ad.Tensor(np.zeros((b, h_dim)))
    c = ad.Tensor(np.zeros((b, h_dim)))
    outs = [None] * t_max
    order = range(t_max - 1, -1, -1) if reverse else range(t_max)
    for t in order:
        pre = tape.add(tape.time_step(pre_x, t), tape.matmul(h, lstm.wh))
        gates = tape.sigmoid(tape.narrow(pre, 0, 3 * h_dim))
        cand = tape.tanh(tape.narrow(pre, 3 * h_dim, h_dim))
        i = tape.narrow(gates, 0, h_dim)
        f = tape.narrow(gates, h_dim, h_dim)
        o = tape.narrow(gates, 2 * h_dim, h_dim)
        c_new = tape.add(tape.mul(f, c), tape.mul(i, cand))
        h_new = tape.mul(o, tape.tanh(c_new))
        col = mask[:, t]
        if col.all():
            h, c = h_new, c_new
        else:
            # keep the previous state at padded rows so padding can never
            # leak into any real position
            keep = ad.Tensor(col.astype(np.float64)[:, None])
            drop = ad.Tensor((~col).astype(np.float64)[:, None])
            c = tape.add(tape.mul(keep, c_new), tape.mul(drop, c))
            h = tape.add(tape.mul(keep, h_new), tape.mul(drop, h))
        outs[t] = h
    return tape.reshape(tape.concat(outs), (b, t_max, h_dim))


def encode(tape, model, word_ids, mask, train=False, rng=None):
    """Bi-LSTM states [B, T, 2H]; forward and backward halves concatenated.

    The backward direction starts at each utterance's last real token.
    Train mode applies dropout to the embedded input and to the states.
    """
    word_ids = np.asarray(word_ids)
    if word_ids.size and (word_ids.min() < 0 or word_ids.max() >= model.config.vocab_size):
        bad = int(np.argwhere(
            (word_ids < 0) | (word_ids >= model.config.vocab_size)
        )[0][0])
        raise DataError(f"word id out of range in batch row {bad}")
    rate = model.config.dropout_rate
    emb = tape.embed(model.params["embedding"], word_ids)
    if train:
        emb = tape.dropout(emb, rate, rng, train=True)
    fw = _run_direction(tape, emb, mask, model.lstm_fw, reverse=False)
    bw = _run_direction(tape, emb, mask, model.lstm_bw, reverse=True)
    h = tape.concat([fw, bw])
    if train:
        h = tape.dropout(h, rate, rng, train=True)
    return h


def _mlp_softmax(tape, x, w1, b1, w2, b2):
    z = tape.tanh(tape.add(tape.matmul(x, w1), b1))
    return tape.softmax(tape.add(tape.matmul(z, w2), b2))


def slot_label_dist(tape, model, h):
    """Per-step label distributions [B, T, L]; rows sum to 1."""
    b, t_max, width = h.shape
    flat = tape.reshape(h, (b * t_max, width))
    p = model.params
    probs = _mlp_softmax(
        tape, flat, p["slot_head.w1"], p["slot_head.b1"], p["slot_head.w2"], p["slot_head.b2"]
    )
    return tape.reshape(probs, (b, t_max, model.config.num_slot_labels))


def slot_loss(tape, probs, label_ids, mask):
    """Masked cross-entropy: token mean per utterance, then batch mean."""
    label_ids = np.asarray(label_ids)
    num_labels = probs.shape[-1]
    if label_ids.min() < 0 or label_ids.max() >= num_labels:
        bad = int(np.argwhere(
            (label_ids < 0) | (label_ids >= num_labels)
        )[0][0])
        raise DataError(f"slot label id out of range in batch row {bad}")
    logp = tape.log(tape.pick(probs, label_ids))
    masked = tape.mul(logp, ad.Tensor(mask.astype(np.float64)))
    per_utt = tape.sum(masked, axis=1)
    lengths = mask.sum(axis=1)
    coef = ad.Tensor(-1.0 / (label_ids.shape[0] * lengths))
    return tape.sum(tape.mul(per_utt, coef))


def attention_pool(tape, h, mask, w, b):
    """Masked softmax attention over steps.

    Returns (pooled [B, width], weights [B, T]); weights at padded
    positions are exactly zero and each row sums to one.
    """
    b_sz, t_max, width = h.shape
    e = tape.reshape(
        tape.add(tape.matmul(tape.reshape(h, (b_sz * t_max, width)), w), b),
        (b_sz, t_max),
    )
    alpha = tape.softmax(e, mask=mask)
    weighted = tape.mul(h, tape.reshape(alpha, (b_sz, t_max, 1)))
    return tape.sum(weighted, axis=1), alpha


def domain_label_dist(tape, model, h, mask, adversarial=True):
    """Domain distributions [B, D] from attention-pooled states.

    By default the states pass through gradient reversal first, so
    encoder parameters receive the negated domain gradient while the
    scorer and domain head receive the unmodified one.
    """
    if not model.adversarial:
        raise ConfigError(f"model kind {model.kind!r} has no domain classifier")
    p = model.params
    hr = tape.grad_reverse(h) if adversarial else h
    pooled, _ = attention_pool(tape, hr, mask, p["attn.w"], p["attn.b"])
    return _mlp_softmax(
        tape, pooled, p["domain_head.w1"], p["domain_head.b1"],
        p["domain_head.w2"], p["domain_head.b2"],
    )


def domain_loss(tape, dist, domain_ids):
    """Mean negative log-probability of the true domain."""
    domain_ids = np.asarray(domain_ids)
    if domain_ids.min() < 0 or domain_ids.max() >= dist.shape[-1]:
        raise DataError("domain id out of range")
    logp = tape.log(tape.pick(dist, domain_ids))
    return tape.scale(tape.sum(logp), -1.0 / domain_ids.shape[0])


@dataclass
class LossBundle:
    slot: ad.Tensor
    domain: ad.Tensor  # None when no domain branch ran
    lambda_adv: float
    total: ad.Tensor


def total_loss(tape, slot, domain, lambda_adv):
    """Combined objective; the domain term is scaled by lambda_adv."""
    if domain is None:
        return LossBundle(slot, None, lambda_adv, slot)
    total = tape.add(slot, tape.scale(domain, lambda_adv))
    return LossBundle(slot, domain, lambda_adv, total)


def tagger_forward(tape, model, batch, train=False, rng=None, lambda_adv=0.0,
                   adversarial=True):
    """Full tagger pass; returns (LossBundle, probs [B, T, L]).

    The domain branch runs only when the model owns one and lambda_adv > 0.
    `adversarial=False` bypasses gradient reversal (diagnostics only).
    """
    h = encode(tape, model, batch.word_ids, batch.mask, train=train, rng=rng)
    probs = slot_label_dist(tape, model, h)
    ly = slot_loss(tape, probs, batch.label_ids, batch.mask)
    ld = None
    if model.adversarial and lambda_adv > 0.0:
        dist = domain_label_dist(tape, model, h, batch.mask, adversarial=adversarial)
        ld = domain_loss(tape, dist, batch.domain_ids)
    return total_loss(tape, ly, ld, lambda_adv), probs


class JointModel:
    """Two frozen encoders feeding one trainable output MLP.

    The encoders run in eval mode; only the MLP trains.  The label set is
    the specific encoder's.  Both encoders must share one word map.
    """

    def __init__(self, specific, general, rng, mlp_hidden_dim=None, dropout_rate=None):
        if specific.vocab.words != general.vocab.words:
            raise ConfigError("encoder vocabularies differ")
        self.specific = specific
        self.general = general
        self.kind = "joint"
        self.vocab = specific.vocab
        self.mlp_hidden_dim = int(mlp_hidden_dim or specific.config.mlp_hidden_dim)
        self.dropout_rate = (
            specific.config.dropout_rate if dropout_rate is None else float(dropout_rate)
        )
        width = 2 * specific.config.hidden_dim + 2 * general.config.hidden_dim
        labels = specific.config.num_slot_labels
        self.params = {
            "output_mlp.w1": _param(rng, (width, self.mlp_hidden_dim)),
            "output_mlp.b1": ad.Tensor(np.zeros(self.mlp_hidden_dim), requires_grad=True),
            "output_mlp.w2": _param(rng, (self.mlp_hidden_dim, labels)),
            "output_mlp.b2": ad.Tensor(np.zeros(labels), requires_grad=True),
        }

    def parameters(self):
        return self.params


def joint_states(joint, word_ids, mask):
    """Concatenated frozen-encoder states [B, T, 2Hs+2Hg] as plain arrays."""
    scratch = ad.Tape()
    hs = encode(scratch, joint.specific, word_ids, mask)
    hg = encode(scratch, joint.general, word_ids, mask)
    return np.concatenate([hs.data, hg.data], axis=-1)


def joint_head(tape, joint, states, train=False, rng=None):
    """Output MLP over (cached or fresh) concatenated states."""
    b, t_max, width = states.shape
    p = joint.params
    if width != p["output_mlp.w1"].shape[0]:
        raise ConfigError(
            f"encoder state width {width} != output MLP input {p['output_mlp.w1'].shape[0]}"
        )
    flat = tape.reshape(states, (b * t_max, width))
    if train:
        flat = tape.dropout(flat, joint.dropout_rate, rng, train=True)
    probs = _mlp_softmax(
        tape, flat, p["output_mlp.w1"], p["output_mlp.b1"],
        p["output_mlp.w2"], p["output_mlp.b2"],
    )
    return tape.reshape(probs, (b, t_max, p["output_mlp.w2"].shape[-1]))


def joint_forward(tape, joint, word_ids, mask, train=False, rng=None):
    """Joint pass: frozen encoders on a scratch tape, MLP on `tape`."""
    states = joint_states(joint, word_ids, mask)
    return joint_head(tape, joint, ad.Tensor(states), train=train, rng=rng)


def label_probs(model, word_ids, mask):
    """Eval-mode label distributions for either model family."""
    tape = ad.Tape()
    if isinstance(model, JointModel):
        return joint_forward(tape, model, word_ids, mask)
    h = encode(tape, model, word_ids, mask)
    return slot_label_dist(tape, model, h)


def predict_label_ids(model, batch):
    """Argmax label ids [B, T]; ties resolve to the lowest id."""
    return label_probs(model, batch.word_ids, batch.mask).data.argmax(axis=-1)


def predict_labels(model, utterances, batch_size=64):
    """Predicted label strings per utterance, in input order."""
    token_lists = [u.tokens for u in utterances]
    out = []
    names = model.vocab.labels
    for batch in batch_tokens(token_lists, model.vocab, batch_size):
        ids = predict_label_ids(model, batch)
        for r in range(batch.size):
            n = int(batch.lengths[r])
            out.append([names[i] for i in ids[r, :n]])
    return out


def encode_corpus_states(model, utterances, batch_size=64):
    """Frozen per-utterance encoder states, trimmed to real length.

    Returns a list of [len_i, 2H] arrays aligned with `utterances`
    (for a JointModel, width 2Hs+2Hg).
    """
    out = []
    token_lists = [u.tokens for u in utterances]
    for batch in batch_tokens(token_lists, model.vocab, batch_size):
        if isinstance(model, JointModel):
            states = joint_states(model, batch.word_ids, batch.mask)
        else:
            tape = ad.Tape()
            states = encode(tape, model, batch.word_ids, batch.mask).data
        for r in range(batch.size):
            out.append(states[r, : int(batch.lengths[r])].copy())
    return out
