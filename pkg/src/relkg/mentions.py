"""Noun phrases, candidate relation mentions and the dependency-path filter."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import Corpus, CorpusError, Sentence, normalize_entity

NOUN_TAGS = frozenset({"NOUN", "PROPN"})
BLOCKING_TAGS = frozenset({"VERB", "AUX", "ADP"})
MODIFIER_RELATIONS = frozenset({"det", "amod", "compound", "nmod"})

DEFAULT_MAX_PATH = 4


@dataclass(frozen=True, order=True)
class NounPhrase:
    sentence_id: str
    start: int
    end: int
    head_index: int

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end

    def overlaps(self, other: NounPhrase) -> bool:
        return self.start <= other.end and other.start <= self.end

    def text(self, sentence: Sentence) -> str:
        return " ".join(sentence.words(self.start, self.end))


@dataclass(frozen=True)
class RelationMention:
    sentence: Sentence
    subj: NounPhrase
    obj: NounPhrase
    path_length: int

    @property
    def sentence_id(self) -> str:
        return self.sentence.id

    @property
    def key(self) -> tuple[str, int, int, int, int]:
        return (self.sentence.id, self.subj.start, self.subj.end, self.obj.start, self.obj.end)

    @property
    def subj_text(self) -> str:
        return self.subj.text(self.sentence)

    @property
    def obj_text(self) -> str:
        return self.obj.text(self.sentence)

    @property
    def entity_pair(self) -> tuple[str, str]:
        return normalize_entity(self.subj_text), normalize_entity(self.obj_text)

    def swapped(self) -> RelationMention:
        return RelationMention(self.sentence, self.obj, self.subj, self.path_length)

    def to_record(self, label: str | None = None) -> dict:
        rec = {"sent_id": self.sentence.id, "subj_start": self.subj.start, "subj_end": self.subj.end,
               "obj_start": self.obj.start, "obj_end": self.obj.end}
        if label is not None:
            rec["label"] = label
        return rec


def mention_key_str(key: tuple) -> str:
    sid, ss, se, os_, oe = key
    return f"{sid}:{ss}-{se}:{os_}-{oe}"


def _is_modifier(sentence: Sentence, child: int, kids: dict[int, list[int]]) -> bool:
    tok = sentence.token(child)
    base = tok.deprel.split(":")[0]
    if base not in MODIFIER_RELATIONS or tok.pos in BLOCKING_TAGS:
        return False
    if base == "nmod":
        # only nominal modifiers without an adposition marker
        return not any(sentence.token(k).pos == "ADP" or sentence.token(k).deprel == "case"
                       for k in kids[child])
    return True


def extract_noun_phrases(sentence: Sentence) -> list[NounPhrase]:
    kids = sentence.children()
    spans: dict[tuple[int, int], NounPhrase] = {}
    for tok in sentence.tokens:
        if tok.pos not in NOUN_TAGS:
            continue
        members = {tok.index}
        stack = [tok.index]
        while stack:
            node = stack.pop()
            for child in kids[node]:
                if child not in members and _is_modifier(sentence, child, kids):
                    members.add(child)
                    stack.append(child)
        start = end = tok.index
        while start - 1 in members:
            start -= 1
        while end + 1 in members:
            end += 1
        span = (start, end)
        if span not in spans:
            spans[span] = NounPhrase(sentence.id, start, end, tok.index)
    return sorted(spans.values(), key=lambda np_: (np_.start, np_.end))


def _ancestors(sentence: Sentence, index: int) -> list[int]:
    chain = [index]
    while chain[-1] != 0:
        chain.append(sentence.token(chain[-1]).head)
    return chain


def dependency_path_length(sentence: Sentence, a: int, b: int) -> int:
    """Number of edges on the undirected tree path between tokens ``a`` and ``b``."""
    if a == b:
        raise ValueError("path length needs two distinct tokens")
    n = len(sentence)
    if not (1 <= a <= n and 1 <= b <= n):
        raise ValueError(f"token index out of range 1..{n}")
    up_a = _ancestors(sentence, a)
    depth_a = {node: d for d, node in enumerate(up_a)}
    for d_b, node in enumerate(_ancestors(sentence, b)):
        if node in depth_a:
            return depth_a[node] + d_b
    raise AssertionError("tokens share the artificial root")


def span_head(sentence: Sentence, start: int, end: int) -> int:
    """Token of the span closest to the root (rightmost on ties)."""
    if not 1 <= start <= end <= len(sentence):
        raise CorpusError(f"span [{start}, {end}] outside sentence {sentence.id}")
    best, best_depth = end, math.inf
    for i in range(start, end + 1):
        depth = len(_ancestors(sentence, i))
        if depth <= best_depth:
            best, best_depth = i, depth
    return best


def make_mention(sentence: Sentence, subj: NounPhrase, obj: NounPhrase) -> RelationMention:
    if subj.overlaps(obj):
        raise CorpusError(f"overlapping spans in sentence {sentence.id}")
    return RelationMention(sentence, subj, obj,
                           dependency_path_length(sentence, subj.head_index, obj.head_index))


def sentence_candidates(sentence: Sentence, max_path: float = DEFAULT_MAX_PATH,
                        phrases: list[NounPhrase] | None = None) -> list[RelationMention]:
    nps = extract_noun_phrases(sentence) if phrases is None else phrases
    out = []
    for s in nps:
        for o in nps:
            if s is o or s.overlaps(o):
                continue
            dist = dependency_path_length(sentence, s.head_index, o.head_index)
            if dist <= max_path:
                out.append(RelationMention(sentence, s, o, dist))
    out.sort(key=lambda m: (m.subj.start, m.obj.start, m.subj.end, m.obj.end))
    return out


def generate_candidates(corpus: Corpus | Iterable[Sentence],
                        max_path: float = DEFAULT_MAX_PATH) -> list[RelationMention]:
    """All ordered in-sentence NP pairs whose heads are within ``max_path`` edges.

    Sentences keep corpus order; within a sentence pairs are ordered by subject
    start, then object start.
    """
    if max_path < 1:
        raise ValueError("max_path must be >= 1")
    out: list[RelationMention] = []
    for sent in corpus:
        out.extend(sentence_candidates(sent, max_path))
    return out


def mention_from_record(rec: dict, sentences: dict[str, Sentence]) -> RelationMention:
    try:
        sent = sentences[rec["sent_id"]]
    except KeyError as exc:
        raise CorpusError(f"mention refers to unknown sentence {rec.get('sent_id')!r}") from exc
    ss, se, os_, oe = (int(rec[k]) for k in ("subj_start", "subj_end", "obj_start", "obj_end"))
    subj = NounPhrase(sent.id, ss, se, span_head(sent, ss, se))
    obj = NounPhrase(sent.id, os_, oe, span_head(sent, os_, oe))
    return make_mention(sent, subj, obj)


def read_mentions(path: str | Path, corpus: Corpus) -> list[tuple[RelationMention, str | None]]:
    """Read mention JSONL; each item is ``(mention, label or None)``."""
    sentences = corpus.by_id()
    out = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read mentions {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{n}: bad JSON ({exc})") from exc
        out.append((mention_from_record(rec, sentences), rec.get("label")))
    return out


def write_mentions(items: Iterable[RelationMention | tuple[RelationMention, str | None]],
                   path: str | Path) -> None:
    lines = []
    for item in items:
        mention, label = item if isinstance(item, tuple) else (item, None)
        lines.append(json.dumps(mention.to_record(label), sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
