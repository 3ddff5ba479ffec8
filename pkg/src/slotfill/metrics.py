"""Chunk precision/recall/F1 with conlleval's lenient boundary semantics,
plus the frozen-encoder domain probe diagnostic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DataError


@dataclass(frozen=True)
class Chunk:
    slot_type: str
    start: int
    end: int  # inclusive


def extract_chunks(labels):
    """Chunks as maximal runs, tolerating label noise.

    A stray I-x (no preceding B-x/I-x of the same type) opens a chunk; an
    I-y following a chunk of a different type closes it and opens a new
    one.  So [B-a, I-b, I-b] yields (a,0,0) and (b,1,2).
    """
    chunks = []
    cur_type, cur_start = None, 0
    for i, lab in enumerate(labels):
        if lab == "O":
            if cur_type is not None:
                chunks.append(Chunk(cur_type, cur_start, i - 1))
                cur_type = None
            continue
        tag, slot = lab[0], lab[2:]
        if tag == "B" or cur_type != slot:
            if cur_type is not None:
                chunks.append(Chunk(cur_type, cur_start, i - 1))
            cur_type, cur_start = slot, i
    if cur_type is not None:
        chunks.append(Chunk(cur_type, cur_start, len(labels) - 1))
    return chunks


@dataclass
class Scores:
    """Micro-averaged chunk counts; percentages derive from them."""

    tp: int = 0
    pred: int = 0
    gold: int = 0

    @property
    def precision(self):
        return 100.0 * self.tp / self.pred if self.pred else 0.0

    @property
    def recall(self):
        return 100.0 * self.tp / self.gold if self.gold else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class EvalReport:
    overall: Scores
    per_domain: dict
    token_accuracy: float
    probe_accuracy: float = None

    def format(self):
        lines = []
        for domain in self.per_domain:
            s = self.per_domain[domain]
            lines.append(
                f"domain {domain}: precision {s.precision:.2f} recall {s.recall:.2f} "
                f"f1 {s.f1:.2f} (gold {s.gold} pred {s.pred} match {s.tp})"
            )
        s = self.overall
        lines.append(
            f"overall: precision {s.precision:.2f} recall {s.recall:.2f} f1 {s.f1:.2f} "
            f"(gold {s.gold} pred {s.pred} match {s.tp})"
        )
        lines.append(f"token accuracy: {self.token_accuracy:.2f}")
        if self.probe_accuracy is not None:
            lines.append(f"domain probe accuracy: {self.probe_accuracy:.2f}")
        return "\n".join(lines) + "\n"


def chunk_f1(gold_utterances, predicted_labels):
    """Score predictions against gold utterances.

    Exact (type, start, end) matches count; scores are micro-averaged
    over chunks, overall and per domain.  Order of utterances does not
    affect any score.
    """
    gold_utterances = list(gold_utterances)
    predicted_labels = list(predicted_labels)
    if len(gold_utterances) != len(predicted_labels):
        raise ContractError(
            f"{len(gold_utterances)} gold utterances vs "
            f"{len(predicted_labels)} predictions"
        )
    overall = Scores()
    per_domain = {}
    tokens = correct = 0
    for idx, (utt, pred) in enumerate(zip(gold_utterances, predicted_labels)):
        if len(utt.labels) != len(pred):
            raise ContractError(
                f"utterance {idx}: {len(utt.labels)} gold labels vs {len(pred)} predicted"
            )
        g = set(extract_chunks(utt.labels))
        p = set(extract_chunks(pred))
        scores = per_domain.setdefault(utt.domain, Scores())
        for s in (overall, scores):
            s.tp += len(g & p)
            s.gold += len(g)
            s.pred += len(p)
        tokens += len(pred)
        correct += sum(a == b for a, b in zip(utt.labels, pred))
    accuracy = 100.0 * correct / tokens if tokens else 0.0
    return EvalReport(overall, per_domain, accuracy)


def probe_domain_accuracy(model, train_utterances, test_utterances, seed=0,
                          max_epochs=10, batch_size=16, learning_rate=1e-3,
                          clip_norm=5.0):
    """How much domain identity a frozen encoder's states still expose.

    Trains a fresh attention-pooled linear-softmax domain classifier on the
    frozen states (Adam, flat epoch count, no dropout, no early stopping)
    and returns test-set domain accuracy as a percentage.  The encoder is
    never updated.
    """
    from .training import Adam, TrainConfig, clip_gradients

    train_utterances = list(train_utterances)
    test_utterances = list(test_utterances)
    domains = []
    for utt in train_utterances:
        if utt.domain not in domains:
            domains.append(utt.domain)
    if len(domains) < 2:
        raise ConfigError(f"probe needs >= 2 domains, got {len(domains)}")
    dom_id = {d: i for i, d in enumerate(domains)}
    for utt in test_utterances:
        if utt.domain not in dom_id:
            raise DataError(f"test domain {utt.domain!r} unseen in probe training set")

    from .models import attention_pool, encode_corpus_states

    train_states = encode_corpus_states(model, train_utterances)
    test_states = encode_corpus_states(model, test_utterances)
    width = train_states[0].shape[-1]

    ss = np.random.SeedSequence(seed)
    init_ss, shuffle_ss = ss.spawn(2)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))

    from .models import glorot

    params = {
        "attn.w": ad.Tensor(glorot(init_rng, (width, 1)), requires_grad=True),
        "attn.b": ad.Tensor(np.zeros(1), requires_grad=True),
        "cls.w": ad.Tensor(glorot(init_rng, (width, len(domains))), requires_grad=True),
        "cls.b": ad.Tensor(np.zeros(len(domains)), requires_grad=True),
    }
    config = TrainConfig(
        learning_rate=learning_rate, batch_size=batch_size, clip_norm=clip_norm,
        dropout=0.0, max_epochs=max_epochs, seed=seed,
    )
    adam = Adam(params, config)
    train_ids = np.array([dom_id[u.domain] for u in train_utterances])

    def run_batch(state_rows, target_ids, train):
        t_max = max(s.shape[0] for s in state_rows)
        h = np.zeros((len(state_rows), t_max, width))
        mask = np.zeros((len(state_rows), t_max), dtype=bool)
        for r, s in enumerate(state_rows):
            h[r, : s.shape[0]] = s
            mask[r, : s.shape[0]] = True
        tape = ad.Tape()
        pooled, _ = attention_pool(tape, ad.Tensor(h), mask, params["attn.w"], params["attn.b"])
        logits = tape.add(tape.matmul(pooled, params["cls.w"]), params["cls.b"])
        dist = tape.softmax(logits)
        if not train:
            return dist.data.argmax(axis=-1)
        from .models import domain_loss

        loss = domain_loss(tape, dist, target_ids)
        tape.backward(loss)
        grads = {
            k: (p.grad if p.grad is not None else np.zeros(p.data.shape))
            for k, p in params.items()
        }
        grads, _ = clip_gradients(grads, config.clip_norm)
        adam.step(grads)
        for p in params.values():
            p.zero_grad()
        return None

    n = len(train_states)
    for _ in range(max_epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = order[lo : lo + batch_size]
            run_batch([train_states[i] for i in sel], train_ids[sel], train=True)

    hits = total = 0
    test_ids = np.array([dom_id[u.domain] for u in test_utterances])
    for lo in range(0, len(test_states), 64):
        sel = range(lo, min(lo + 64, len(test_states)))
        pred = run_batch([test_states[i] for i in sel], None, train=False)
        hits += int((pred == test_ids[lo : lo + 64]).sum())
        total += len(pred)
    return 100.0 * hits / total
