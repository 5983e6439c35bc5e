"""Knowledge-graph construction from classified relation mentions.

Two graphs are built and merged: one anchored on definition blocks, where an
important-entity set grows sentence by sentence from the defined term, and
one over every other sentence, filtered by teacher confidence.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import NO_RELATION, Corpus, Sentence, normalize_entity
from .mentions import DEFAULT_MAX_PATH, NounPhrase, dependency_path_length, extract_noun_phrases, \
    sentence_candidates

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    relation: str
    object: str
    sentence_id: str = ""
    confidence: float = 0.0

    def __post_init__(self):
        if self.relation == NO_RELATION:
            raise ValueError("NoRelation cannot form a triple")
        if self.subject == self.object:
            raise ValueError(f"self-loop on {self.subject!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return self.subject, self.relation, self.object

    def to_row(self) -> str:
        return f"{self.subject}\t{self.relation}\t{self.object}\t{self.sentence_id}\t{self.confidence:.6f}"


def _better(a: Triple, b: Triple) -> Triple:
    """Higher confidence wins; equal confidence falls back to the smaller sentence id."""
    return min(a, b, key=lambda t: (-t.confidence, t.sentence_id))


@dataclass
class KnowledgeGraph:
    entities: set[str] = field(default_factory=set)
    triples: dict[tuple[str, str, str], Triple] = field(default_factory=dict)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], entities: Iterable[str] = ()) -> KnowledgeGraph:
        g = cls(set(entities))
        for t in triples:
            g.add(t)
        return g

    def add(self, triple: Triple) -> None:
        self.entities.update((triple.subject, triple.object))
        old = self.triples.get(triple.key)
        self.triples[triple.key] = triple if old is None else _better(old, triple)

    def __len__(self) -> int:
        return len(self.triples)

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeGraph) and self.entities == other.entities \
            and self.triples == other.triples

    def sorted_triples(self) -> list[Triple]:
        return [self.triples[k] for k in sorted(self.triples)]

    def to_tsv(self) -> str:
        return "".join(t.to_row() + "\n" for t in self.sorted_triples())

    def to_json(self) -> str:
        data = {"entities": sorted(self.entities),
                "triples": [{"subject": t.subject, "relation": t.relation, "object": t.object,
                             "sentence_id": t.sentence_id, "confidence": t.confidence}
                            for t in self.sorted_triples()]}
        return json.dumps(data, indent=2) + "\n"

    def write(self, path: str | Path, json_path: str | Path | None = None) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")
        if json_path is not None:
            Path(json_path).write_text(self.to_json(), encoding="utf-8")


def read_tsv(path: str | Path) -> KnowledgeGraph:
    g = KnowledgeGraph()
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{n}: expected 5 tab-separated fields")
        g.add(Triple(parts[0], parts[1], parts[2], parts[3], float(parts[4])))
    return g


def merge_graphs(a: KnowledgeGraph, b: KnowledgeGraph) -> KnowledgeGraph:
    """Union keyed on entity id and (s, r, o); duplicates keep the best provenance."""
    out = KnowledgeGraph(set(a.entities) | set(b.entities), dict(a.triples))
    for t in b.triples.values():
        out.add(t)
    return out


def _triples_from(mentions: Sequence, labeler, threshold: float = 0.0) -> list[Triple]:
    if not mentions:
        return []
    out = []
    for m, (label, conf) in zip(mentions, labeler.classify(mentions)):
        subj, obj = m.entity_pair
        if label == NO_RELATION or conf < threshold or subj == obj:
            continue
        out.append(Triple(subj, label, obj, m.sentence.id, conf))
    return out


def definition_blocks(corpus: Corpus | Iterable[Sentence]) -> list[tuple[str, list[Sentence]]]:
    """Runs of consecutive sentences sharing a definition term (and document)."""
    sentences = corpus.sentences if isinstance(corpus, Corpus) else list(corpus)
    blocks = []
    for (doc, term), group in groupby(sentences, key=lambda s: (s.doc_id, s.definition_term)):
        if term is not None:
            blocks.append((normalize_entity(term), list(group)))
    return blocks


def connected_entities(sentence: Sentence, important: set[str], phrases: list[NounPhrase],
                       max_path: float = DEFAULT_MAX_PATH) -> set[str]:
    """Entity ids of NPs whose heads lie within ``max_path`` edges of an important NP head."""
    ids = [normalize_entity(p.text(sentence)) for p in phrases]
    anchors = [phrase.head_index for phrase, e in zip(phrases, ids) if e in important]
    found = set()
    for phrase, e in zip(phrases, ids):
        if e in important:
            continue
        head = phrase.head_index
        if any(a != head and dependency_path_length(sentence, a, head) <= max_path for a in anchors):
            found.add(e)
    return found


def process_block(term: str, sentences: Sequence[Sentence], labeler,
                  max_path: float = DEFAULT_MAX_PATH) -> tuple[list[Triple], set[str]]:
    """Triples of one definition block and the final important-entity set."""
    important = {term}
    triples = []
    for sent in sentences:
        phrases = extract_noun_phrases(sent)
        cands = [m for m in sentence_candidates(sent, max_path, phrases)
                 if m.entity_pair[0] in important or m.entity_pair[1] in important]
        triples.extend(_triples_from(cands, labeler))
        important |= connected_entities(sent, important, phrases, max_path)
    return triples, important


def build_definition_graph(corpus: Corpus, labeler, max_path: float = DEFAULT_MAX_PATH) -> KnowledgeGraph:
    blocks = definition_blocks(corpus)
    if not blocks:
        log.warning("corpus has no definition sentences; definition graph is empty")
        return KnowledgeGraph()
    g = KnowledgeGraph()
    for term, sentences in blocks:
        triples, _ = process_block(term, sentences, labeler, max_path)
        for t in triples:
            g.add(t)
    return g


def build_corpus_graph(corpus: Corpus, labeler, threshold: float = DEFAULT_THRESHOLD,
                       max_path: float = DEFAULT_MAX_PATH) -> KnowledgeGraph:
    """Triples from every non-definition sentence at confidence >= ``threshold``."""
    mentions = []
    for sent in corpus.sentences:
        if sent.definition_term is None:
            mentions.extend(sentence_candidates(sent, max_path))
    return KnowledgeGraph.from_triples(_triples_from(mentions, labeler, threshold))


def build_graph(corpus: Corpus, labeler, threshold: float = DEFAULT_THRESHOLD,
                max_path: float = DEFAULT_MAX_PATH) -> KnowledgeGraph:
    return merge_graphs(build_definition_graph(corpus, labeler, max_path),
                        build_corpus_graph(corpus, labeler, threshold, max_path))
