"""Vocabulary and averaged-embedding mention encodings.

A mention is encoded as the concatenation of four means: word embeddings,
POS embeddings, and the embeddings of every token's offset to the subject
and to the object span.  Everything is linear in the embedding tables, so
batches are encoded as weighted sums over padded id arrays.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Sentence

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
MAX_OFFSET = 50
N_OFFSETS = 2 * MAX_OFFSET + 1

TABLES = ("word", "pos", "subj_offset", "obj_offset")


@dataclass
class Vocabulary:
    words: dict[str, int]
    pos: dict[str, int]
    word_counts: dict[str, int] = field(default_factory=dict)
    pos_counts: dict[str, int] = field(default_factory=dict)
    frozen: bool = True

    def word_id(self, word: str) -> int:
        return self.words.get(word.lower(), UNK_ID)

    def pos_id(self, tag: str) -> int:
        return self.pos.get(tag, UNK_ID)

    def add_word(self, word: str) -> int:
        if self.frozen:
            raise RuntimeError("vocabulary is frozen")
        return self.words.setdefault(word.lower(), len(self.words))

    def save(self, path: str | Path) -> None:
        lines = []
        for kind, table, counts in (("pos", self.pos, self.pos_counts),
                                    ("word", self.words, self.word_counts)):
            for tok, idx in sorted(table.items(), key=lambda kv: kv[1]):
                lines.append(f"{kind}\t{tok}\t{idx}\t{counts.get(tok, 0)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        vocab = cls({}, {})
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            kind, tok, idx, count = line.split("\t")
            table, counts = (vocab.words, vocab.word_counts) if kind == "word" else (vocab.pos, vocab.pos_counts)
            table[tok] = int(idx)
            if int(count):
                counts[tok] = int(count)
        return vocab


def _assign(counts: Counter, min_count: int) -> dict[str, int]:
    ids = {PAD: PAD_ID, UNK: UNK_ID}
    for tok, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_count:
            ids[tok] = len(ids)
    return ids


def build_vocab(sentences: Iterable[Sentence], min_count: int = 1) -> Vocabulary:
    """Frequency-ordered vocabulary over the (deduplicated) sentences.

    Ties in frequency are broken lexicographically; rarer words than
    ``min_count`` are left to the unknown id.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    seen: dict[str, Sentence] = {}
    for s in sentences:
        seen.setdefault(s.id, s)
    if not seen:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    words: Counter = Counter()
    tags: Counter = Counter()
    for s in seen.values():
        for t in s.tokens:
            words[t.surface.lower()] += 1
            tags[t.pos] += 1
    return Vocabulary(_assign(words, min_count), _assign(tags, 1), dict(words), dict(tags))


@dataclass(frozen=True)
class FeatureDims:
    word: int = 50
    pos: int = 10
    offset: int = 10

    @property
    def d_z(self) -> int:
        return self.word + self.pos + 2 * self.offset

    def widths(self) -> tuple[int, int, int, int]:
        return self.word, self.pos, self.offset, self.offset


@dataclass
class EmbeddingTables:
    word: np.ndarray
    pos: np.ndarray
    subj_offset: np.ndarray
    obj_offset: np.ndarray

    @classmethod
    def initialize(cls, vocab: Vocabulary, dims: FeatureDims = FeatureDims(),
                   rng: np.random.Generator | None = None, scale: float = 1.0) -> EmbeddingTables:
        shapes = [(len(vocab.words), dims.word), (len(vocab.pos), dims.pos),
                  (N_OFFSETS, dims.offset), (N_OFFSETS, dims.offset)]
        if rng is None:
            return cls(*(np.zeros(s) for s in shapes))
        return cls(*(rng.normal(0.0, scale, size=s) for s in shapes))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TABLES}

    def copy(self) -> EmbeddingTables:
        return EmbeddingTables(*(getattr(self, n).copy() for n in TABLES))

    @property
    def d_z(self) -> int:
        return sum(getattr(self, n).shape[1] for n in TABLES)


def position_offsets(length: int, start: int, end: int) -> np.ndarray:
    """Offset of each token (1-based) to the span ``[start, end]``, clipped."""
    idx = np.arange(1, length + 1)
    off = np.where(idx < start, idx - start, np.where(idx > end, idx - end, 0))
    return np.clip(off, -MAX_OFFSET, MAX_OFFSET)


@dataclass(frozen=True)
class MentionEncoding:
    z: np.ndarray
    word_ids: np.ndarray
    pos_ids: np.ndarray
    subj_offsets: np.ndarray
    obj_offsets: np.ndarray


def mention_ids(mention, vocab: Vocabulary) -> tuple[np.ndarray, ...]:
    sent = mention.sentence
    n = len(sent)
    words = np.array([vocab.word_id(t.surface) for t in sent.tokens], dtype=np.int64)
    tags = np.array([vocab.pos_id(t.pos) for t in sent.tokens], dtype=np.int64)
    so = position_offsets(n, mention.subj.start, mention.subj.end)
    oo = position_offsets(n, mention.obj.start, mention.obj.end)
    return words, tags, so, oo


def encode(mention, vocab: Vocabulary, tables: EmbeddingTables) -> MentionEncoding:
    words, tags, so, oo = mention_ids(mention, vocab)
    z = np.concatenate([
        tables.word[words].mean(axis=0),
        tables.pos[tags].mean(axis=0),
        tables.subj_offset[so + MAX_OFFSET].mean(axis=0),
        tables.obj_offset[oo + MAX_OFFSET].mean(axis=0),
    ])
    return MentionEncoding(z, words, tags, so, oo)


class EncodedMentions:
    """Padded token-id arrays for a fixed list of mentions.

    ``forward`` gives the n x d_z encoding matrix; ``backward`` maps a
    gradient on it back onto the embedding tables.  Padding slots carry
    weight 0, real tokens weight 1/length.
    """

    def __init__(self, mentions: Sequence, vocab: Vocabulary):
        self.n = len(mentions)
        ids = [mention_ids(m, vocab) for m in mentions]
        width = max((len(x[0]) for x in ids), default=0)
        self.ids = [np.zeros((self.n, width), dtype=np.int64) for _ in TABLES]
        self.weights = np.zeros((self.n, width))
        for r, parts in enumerate(ids):
            length = len(parts[0])
            self.weights[r, :length] = 1.0 / length
            for k, (arr, shift) in enumerate(zip(parts, (0, 0, MAX_OFFSET, MAX_OFFSET))):
                self.ids[k][r, :length] = arr + shift

    def _select(self, rows):
        if rows is None:
            return self.ids, self.weights
        return [a[rows] for a in self.ids], self.weights[rows]

    def forward(self, tables: EmbeddingTables, rows=None) -> np.ndarray:
        ids, w = self._select(rows)
        return np.hstack([np.einsum("nl,nld->nd", w, getattr(tables, name)[i])
                          for i, name in zip(ids, TABLES)])

    def backward(self, tables: EmbeddingTables, grad_z: np.ndarray, rows=None) -> dict[str, np.ndarray]:
        ids, w = self._select(rows)
        grads = {}
        col = 0
        for i, name in zip(ids, TABLES):
            table = getattr(tables, name)
            width = table.shape[1]
            contrib = w[:, :, None] * grad_z[:, None, col:col + width]
            flat = (i[:, :, None] * width + np.arange(width)).ravel()
            grads[name] = np.bincount(flat, contrib.ravel(), minlength=table.size).reshape(table.shape)
            col += width
        return grads
