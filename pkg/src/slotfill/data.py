"""BIO corpus reading/writing, vocabularies, and padded mini-batches."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1

_LABEL_RE = re.compile(r"^(?:O|[BI]-.+)$")


@dataclass
class Utterance:
    tokens: list
    labels: list
    domain: str

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise DataError(f"empty utterance (domain {self.domain!r})")
        if len(self.tokens) != len(self.labels):
            raise DataError(
                f"{len(self.tokens)} tokens vs {len(self.labels)} labels "
                f"(domain {self.domain!r})"
            )
        for lab in self.labels:
            if not _LABEL_RE.match(lab):
                raise DataError(f"illegal BIO label {lab!r}")

    def __len__(self):
        return len(self.tokens)


def read_bio(path, domain_name):
    """Parse a BIO file into utterances, in file order.

    One "token<TAB or single space>label" pair per line; a blank line ends
    an utterance (runs of blank lines are tolerated).
    """
    utterances = []
    tokens, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                if tokens:
                    utterances.append(Utterance(tokens, labels, domain_name))
                    tokens, labels = [], []
                continue
            parts = line.split("\t") if "\t" in line else line.split(" ")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(
                    f"{path}:{lineno}: expected 'token<TAB or space>label', got {line!r}"
                )
            tok, lab = parts
            if not _LABEL_RE.match(lab):
                raise DataError(f"{path}:{lineno}: illegal BIO label {lab!r}")
            tokens.append(tok)
            labels.append(lab)
    if tokens:
        utterances.append(Utterance(tokens, labels, domain_name))
    return utterances


def write_bio(utterances, path):
    """Write utterances in the tab-separated BIO layout read_bio accepts."""
    blocks = []
    for utt in utterances:
        blocks.append(
            "\n".join(f"{t}\t{l}" for t, l in zip(utt.tokens, utt.labels))
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(blocks) + "\n")


class Vocabulary:
    """Word, label, and domain id maps.

    Word ids 0 and 1 are reserved for padding and unknown tokens; all maps
    otherwise follow first-occurrence order of the corpus they were built
    from, so rebuilds are deterministic.
    """

    def __init__(self, words, labels, domains):
        words, labels, domains = list(words), list(labels), list(domains)
        if words[:2] != [PAD, UNK]:
            raise ConfigError(f"word list must start with {PAD!r}, {UNK!r}")
        for name, entries in (("word", words), ("label", labels), ("domain", domains)):
            if len(set(entries)) != len(entries):
                raise ConfigError(f"duplicate {name} entries")
        if not labels or not domains:
            raise ConfigError("label and domain lists must be non-empty")
        self.words = words
        self.labels = labels
        self.domains = domains
        self.word_to_id = {w: i for i, w in enumerate(words)}
        self.label_to_id = {l: i for i, l in enumerate(labels)}
        self.domain_to_id = {d: i for i, d in enumerate(domains)}

    @property
    def num_words(self):
        return len(self.words)

    @property
    def num_labels(self):
        return len(self.labels)

    @property
    def num_domains(self):
        return len(self.domains)

    def word_id(self, token):
        return self.word_to_id.get(token, UNK_ID)

    def dump_text(self):
        """Deterministic id-ordered dump, written next to checkpoints."""
        lines = ["# slotfill vocabulary v1"]
        for section, entries in (
            ("word", self.words),
            ("label", self.labels),
            ("domain", self.domains),
        ):
            for i, entry in enumerate(entries):
                lines.append(f"{section}\t{i}\t{entry}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and self.words == other.words
            and self.labels == other.labels
            and self.domains == other.domains
        )


def build_vocab(utterances, word_source=None):
    """Build maps in first-occurrence order.

    `word_source` optionally supplies a wider utterance set for the word
    map only (shared-vocabulary training across domains); labels and
    domains always come from `utterances`.
    """
    utterances = list(utterances)
    if not utterances:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    words = [PAD, UNK]
    seen = set(words)
    for utt in utterances if word_source is None else word_source:
        for tok in utt.tokens:
            if tok not in seen:
                seen.add(tok)
                words.append(tok)
    labels, lab_seen = [], set()
    domains, dom_seen = [], set()
    for utt in utterances:
        for lab in utt.labels:
            if lab not in lab_seen:
                lab_seen.add(lab)
                labels.append(lab)
        if utt.domain not in dom_seen:
            dom_seen.add(utt.domain)
            domains.append(utt.domain)
    return Vocabulary(words, labels, domains)


@dataclass
class Batch:
    """Padded id arrays for one mini-batch.

    Padding uses word id 0 and label id 0; `mask` is True at real tokens.
    `indices` are positions into the utterance list the batch was built
    from (used to line batches up with cached encoder states).
    """

    word_ids: np.ndarray  # [B, T] int64
    label_ids: np.ndarray  # [B, T] int64
    domain_ids: np.ndarray  # [B] int64
    mask: np.ndarray  # [B, T] bool
    indices: np.ndarray = field(default=None)  # [B] int64

    @property
    def size(self):
        return self.word_ids.shape[0]

    @property
    def t_max(self):
        return self.word_ids.shape[1]

    @property
    def lengths(self):
        return self.mask.sum(axis=1)


def encode_and_batch(utterances, vocab, batch_size, rng=None, shuffle=False, train=False):
    """Encode utterances and group them into padded batches.

    Train mode enforces a closed label world (unknown label -> DataError)
    and replaces singleton tokens (corpus frequency 1) with UNK at
    probability 0.5, one draw per occurrence.  The rng drives first the
    shuffle permutation, then the replacement draws in batch order.
    """
    utterances = list(utterances)
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not utterances:
        return []
    if (shuffle or train) and rng is None:
        raise ConfigError("shuffle/train batching requires an rng")
    order = rng.permutation(len(utterances)) if shuffle else np.arange(len(utterances))
    freq = Counter(t for u in utterances for t in u.tokens) if train else None

    batches = []
    for lo in range(0, len(order), batch_size):
        chunk = order[lo : lo + batch_size]
        rows = [utterances[i] for i in chunk]
        t_max = max(len(u) for u in rows)
        word_ids = np.zeros((len(rows), t_max), dtype=np.int64)
        label_ids = np.zeros((len(rows), t_max), dtype=np.int64)
        domain_ids = np.zeros(len(rows), dtype=np.int64)
        mask = np.zeros((len(rows), t_max), dtype=bool)
        for r, utt in enumerate(rows):
            for c, (tok, lab) in enumerate(zip(utt.tokens, utt.labels)):
                wid = vocab.word_to_id.get(tok, UNK_ID)
                if train and freq[tok] == 1 and rng.random() < 0.5:
                    wid = UNK_ID
                word_ids[r, c] = wid
                lid = vocab.label_to_id.get(lab)
                if lid is None:
                    if train:
                        raise DataError(
                            f"label {lab!r} not in the training label set"
                        )
                    lid = 0
                label_ids[r, c] = lid
            did = vocab.domain_to_id.get(utt.domain)
            if did is None:
                raise DataError(f"unknown domain {utt.domain!r}")
            domain_ids[r] = did
            mask[r, : len(utt)] = True
        batches.append(Batch(word_ids, label_ids, domain_ids, mask, chunk.astype(np.int64)))
    return batches


def batch_tokens(token_lists, vocab, batch_size):
    """Label- and domain-free batches for prediction-only input."""
    batches = []
    token_lists = list(token_lists)
    for lo in range(0, len(token_lists), batch_size):
        rows = token_lists[lo : lo + batch_size]
        t_max = max(len(r) for r in rows)
        word_ids = np.zeros((len(rows), t_max), dtype=np.int64)
        mask = np.zeros((len(rows), t_max), dtype=bool)
        for r, toks in enumerate(rows):
            for c, tok in enumerate(toks):
                word_ids[r, c] = vocab.word_id(tok)
            mask[r, : len(toks)] = True
        batches.append(
            Batch(
                word_ids,
                np.zeros_like(word_ids),
                np.zeros(len(rows), dtype=np.int64),
                mask,
                np.arange(lo, lo + len(rows), dtype=np.int64),
            )
        )
    return batches
