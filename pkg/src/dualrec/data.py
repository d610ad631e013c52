"""Interaction logs, fixed-length windows, leave-one-out splits and a planted corpus."""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .model import PAD


@dataclass
class InteractionSequence:
    user: int
    items: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self) -> None:
        self.items = np.asarray(self.items, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.items.shape != self.timestamps.shape:
            raise ValueError(f"user {self.user}: items and timestamps differ in length")

    def __len__(self) -> int:
        return int(self.items.shape[0])

    def num_real(self) -> int:
        return int(np.count_nonzero(self.items != PAD))

    def strip_padding(self) -> "InteractionSequence":
        keep = self.items != PAD
        return InteractionSequence(self.user, self.items[keep], self.timestamps[keep])


@dataclass
class Example:
    """One prediction query: the history seen so far and the item that came next."""

    user: int
    prefix: InteractionSequence
    target: int
    target_time: int


@dataclass
class DatasetSplit:
    train: list[InteractionSequence] = field(default_factory=list)
    valid: list[Example] = field(default_factory=list)
    test: list[Example] = field(default_factory=list)


class DataFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ingestion

def read_triples(path: str | os.PathLike) -> list[tuple[int, int, int]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                user, item, ts = (int(p) for p in parts)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field in {line.strip()!r}") from None
            if user < 0 or item <= 0 or ts < 0:
                raise DataFormatError(f"{path}:{lineno}: ids must be positive and timestamps >= 0")
            rows.append((user, item, ts))
    if not rows:
        raise DataFormatError(f"{path}: no interactions")
    return rows


def ingest(path: str | os.PathLike, remap: bool = True) -> tuple[list[InteractionSequence], dict[int, int]]:
    """Group a ``user<TAB>item<TAB>timestamp`` file into time-ordered sequences.

    Items are remapped densely to ``1..|V|`` in order of original id. Returns
    the sequences (sorted by user id) and the ``original -> dense`` map. With
    ``remap=False`` ids are kept as they are (the map is then the identity),
    which is how already-canonical files are read back.
    """
    rows = read_triples(path)
    observed = sorted({r[1] for r in rows})
    if remap:
        vocab = {orig: dense for dense, orig in enumerate(observed, start=1)}
    else:
        vocab = {item: item for item in observed}
    by_user: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for user, item, ts in rows:
        by_user[user].append((ts, vocab[item]))
    sequences = []
    for user in sorted(by_user):
        events = sorted(by_user[user], key=lambda e: e[0])  # stable: ties keep file order
        sequences.append(InteractionSequence(user, [e[1] for e in events], [e[0] for e in events]))
    return sequences, vocab


def write_sequences(sequences: list[InteractionSequence], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for seq in sorted(sequences, key=lambda s: s.user):
            for item, ts in zip(seq.items, seq.timestamps):
                fh.write(f"{seq.user}\t{item}\t{ts}\n")


def write_vocab(vocab: dict[int, int], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for orig, dense in sorted(vocab.items(), key=lambda kv: kv[1]):
            fh.write(f"{orig}\t{dense}\n")


def read_vocab(path: str | os.PathLike) -> dict[int, int]:
    vocab = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                orig, dense = line.split("\t")
                vocab[int(orig)] = int(dense)
    return vocab


def vocab_size(sequences: list[InteractionSequence]) -> int:
    """Embedding-table rows needed: largest item id plus the padding row."""
    return 1 + max(int(s.items.max()) for s in sequences if len(s))


# ---------------------------------------------------------------------------
# windows and splits

def normalize_length(seq: InteractionSequence, n: int) -> InteractionSequence:
    """Keep the ``n`` most recent interactions and pad the tail.

    Padding uses item 0 and repeats the last real timestamp.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    items = seq.items[-n:]
    ts = seq.timestamps[-n:]
    pad = n - items.shape[0]
    last = ts[-1] if ts.shape[0] else 0
    return InteractionSequence(seq.user, np.concatenate([items, np.zeros(pad, np.int64)]),
                               np.concatenate([ts, np.full(pad, last, np.int64)]))


def split_leave_one_out(sequences: list[InteractionSequence]) -> DatasetSplit:
    """Last interaction is the test target, the one before it the validation target.

    Users with fewer than three interactions only contribute training data.
    """
    split = DatasetSplit()
    for seq in sequences:
        m = len(seq)
        if m < 3:
            split.train.append(seq)
            continue
        split.train.append(InteractionSequence(seq.user, seq.items[: m - 2], seq.timestamps[: m - 2]))
        split.valid.append(Example(seq.user, InteractionSequence(seq.user, seq.items[: m - 2], seq.timestamps[: m - 2]),
                                   int(seq.items[m - 2]), int(seq.timestamps[m - 2])))
        split.test.append(Example(seq.user, InteractionSequence(seq.user, seq.items[: m - 1], seq.timestamps[: m - 1]),
                                  int(seq.items[m - 1]), int(seq.timestamps[m - 1])))
    return split


def write_split_manifest(sequences: list[InteractionSequence], path: str | os.PathLike) -> None:
    """Per user: ``user<TAB>valid_index<TAB>test_index`` (``-1`` when absent)."""
    with open(path, "w") as fh:
        for seq in sorted(sequences, key=lambda s: s.user):
            m = len(seq)
            valid, test = (m - 2, m - 1) if m >= 3 else (-1, -1)
            fh.write(f"{seq.user}\t{valid}\t{test}\n")


def training_windows(train: list[InteractionSequence], n: int):
    """Stack next-item training windows.

    Returns ``(items, timestamps, targets)``, each ``(num_seqs, n)``: position
    ``i`` of ``items`` is asked to predict ``targets[i]``; padded targets are 0.
    """
    rows = [s for s in train if len(s) >= 2]
    items = np.zeros((len(rows), n), np.int64)
    times = np.zeros((len(rows), n), np.int64)
    targets = np.zeros((len(rows), n), np.int64)
    for r, seq in enumerate(rows):
        window = InteractionSequence(seq.user, seq.items[-(n + 1):], seq.timestamps[-(n + 1):])
        inp = normalize_length(InteractionSequence(seq.user, window.items[:-1], window.timestamps[:-1]), n)
        items[r], times[r] = inp.items, inp.timestamps
        tgt = window.items[1:]
        targets[r, : tgt.shape[0]] = tgt
    return items, times, targets


def query_windows(examples: list[Example], n: int):
    """Stack evaluation prefixes; returns ``(items, timestamps, last_index, targets)``."""
    items = np.zeros((len(examples), n), np.int64)
    times = np.zeros((len(examples), n), np.int64)
    last = np.zeros(len(examples), np.int64)
    targets = np.array([ex.target for ex in examples], dtype=np.int64)
    for r, ex in enumerate(examples):
        w = normalize_length(ex.prefix, n)
        items[r], times[r] = w.items, w.timestamps
        last[r] = min(len(ex.prefix), n) - 1
    return items, times, last, targets


# ---------------------------------------------------------------------------
# planted corpus

@dataclass
class SynthSpec:
    """Knobs of the planted corpus.

    Users interact in bursts. Inside a burst, gaps are a few seconds; between
    bursts, hours to days. Each burst has one topic (a block of
    ``topic_size`` consecutive item ids); each interaction in it is a topic
    item with probability ``topic_prob`` and otherwise a uniformly random
    item. The current burst, and hence its topic, is only recoverable from
    timestamps.
    """

    topic_size: int = 10
    burst_len: tuple[int, int] = (2, 8)
    topic_prob: float = 0.5
    short_gap: tuple[int, int] = (1, 5)
    long_gap: tuple[int, int] = (3600, 3 * 86400)
    length: tuple[int, int] = (40, 55)


def synth_generate(num_users: int, vocab: int, pattern_seed: int,
                   spec: SynthSpec | None = None, return_topics: bool = False):
    """Deterministic planted-pattern corpus; ``vocab`` counts the padding id.

    With ``return_topics`` also returns, per user, the latent burst topic of
    every interaction (for oracle checks; the random stream is unchanged).
    """
    spec = spec or SynthSpec()
    num_items = vocab - 1
    num_topics = num_items // spec.topic_size
    if num_topics < 2:
        raise ValueError(f"vocab {vocab} leaves fewer than two topics of {spec.topic_size} items")
    rng = np.random.default_rng(pattern_seed)
    out, latent = [], []
    for user in range(1, num_users + 1):
        length = int(rng.integers(spec.length[0], spec.length[1] + 1))
        items, times, topics = [], [], []
        t = int(rng.integers(1_000_000, 2_000_000))
        prev_topic = -1
        while len(items) < length:
            topic = int(rng.integers(num_topics - 1))
            if topic >= prev_topic >= 0:
                topic += 1  # uniform over topics other than the previous one
            prev_topic = topic
            for _ in range(int(rng.integers(spec.burst_len[0], spec.burst_len[1] + 1))):
                if rng.random() < spec.topic_prob:
                    item = 1 + topic * spec.topic_size + int(rng.integers(spec.topic_size))
                else:
                    item = 1 + int(rng.integers(num_items))
                items.append(item)
                times.append(t)
                topics.append(topic)
                t += int(rng.integers(spec.short_gap[0], spec.short_gap[1] + 1))
            t += int(rng.integers(spec.long_gap[0], spec.long_gap[1] + 1))
        out.append(InteractionSequence(user, items[:length], times[:length]))
        latent.append(np.array(topics[:length], dtype=np.int64))
    return (out, latent) if return_topics else out


def burst_topic(items: np.ndarray, times: np.ndarray, spec: SynthSpec,
                num_topics: int) -> int:
    """Planted-rule oracle: majority topic of the current burst (-1 if none)."""
    start = len(times) - 1
    while start > 0 and times[start] - times[start - 1] <= spec.short_gap[1]:
        start -= 1
    topics = [(int(i) - 1) // spec.topic_size for i in items[start:]]
    topics = [t for t in topics if t < num_topics]
    if not topics:
        return -1
    counts = np.bincount(topics, minlength=num_topics)
    return int(np.argmax(counts))
