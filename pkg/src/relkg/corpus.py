"""Pre-parsed sentences, entity normalization, relation inventory and mention stores."""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

NO_RELATION = "NoRelation"

_PREDICATE_ONLY = "predicate-only:"


class CorpusError(Exception):
    """Raised for unusable corpus, inventory or store input."""


@dataclass(frozen=True)
class Token:
    index: int
    surface: str
    pos: str
    head: int
    deprel: str
    lemma: str = "_"


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]
    doc_id: str = "_"
    definition_term: str | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def token(self, index: int) -> Token:
        return self.tokens[index - 1]

    def words(self, start: int, end: int) -> list[str]:
        return [t.surface for t in self.tokens[start - 1:end]]

    def children(self) -> dict[int, list[int]]:
        kids: dict[int, list[int]] = {i: [] for i in range(len(self.tokens) + 1)}
        for t in self.tokens:
            kids[t.head].append(t.index)
        return kids


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    rejects: tuple[str, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def by_id(self) -> dict[str, Sentence]:
        return {s.id: s for s in self.sentences}


@dataclass(frozen=True)
class Entity:
    id: str
    surface_forms: frozenset[str] = frozenset()


def normalize_entity(surface: str) -> str:
    """Canonical entity id: lowercase, punctuation-trimmed, whitespace runs as ``_``.

    >>> normalize_entity("  Price  Reduction ")
    'price_reduction'
    """
    text = "_".join(surface.split()).strip(string.punctuation).lower()
    if not text:
        raise CorpusError(f"unusable noun phrase: {surface!r}")
    return text


def make_entity(surfaces: Iterable[str]) -> Entity:
    forms = frozenset(surfaces)
    ids = {normalize_entity(s) for s in forms}
    if len(ids) != 1:
        raise CorpusError(f"surface forms do not share one id: {sorted(forms)}")
    return Entity(ids.pop(), forms)


def validate_tokens(tokens: Sequence[Token]) -> str | None:
    """Return a description of the first tree violation, or None for a valid tree."""
    n = len(tokens)
    if n == 0:
        return "empty sentence"
    for pos, tok in enumerate(tokens, start=1):
        if tok.index != pos:
            return f"token indices not contiguous at position {pos}"
    roots = [t.index for t in tokens if t.head == 0]
    for t in tokens:
        if not 0 <= t.head <= n:
            return f"token {t.index} has head {t.head} outside [0, {n}]"
        if t.head == t.index:
            return f"token {t.index} is its own head"
    if len(roots) != 1:
        return f"expected exactly one root, found {len(roots)}"
    heads = {t.index: t.head for t in tokens}
    for start in heads:
        seen = set()
        node = start
        while node != 0:
            if node in seen:
                return f"cycle through token {start}"
            seen.add(node)
            node = heads[node]
    return None


def _parse_block(lines: list[str], meta: dict[str, str], auto_id: str) -> Sentence:
    tokens = []
    for line in lines:
        cols = line.split("\t")
        if len(cols) != 10:
            raise CorpusError(f"expected 10 columns, got {len(cols)}: {line!r}")
        if "-" in cols[0] or "." in cols[0]:
            continue  # multiword ranges and empty nodes carry no tree edges
        try:
            index, head = int(cols[0]), int(cols[6])
        except ValueError as exc:
            raise CorpusError(f"non-integer id/head in {line!r}") from exc
        tokens.append(Token(index, cols[1], cols[3], head, cols[7], cols[2]))
    def_term = meta.get("def_term")
    return Sentence(
        id=meta.get("sent_id", auto_id),
        tokens=tuple(tokens),
        doc_id=meta.get("doc_id", "_"),
        definition_term=normalize_entity(def_term) if def_term else None,
    )


def ingest_conllu(path: str | Path, definition_markers: bool = True) -> Corpus:
    """Read a 10-column CoNLL-U style file, rejecting sentences with invalid trees.

    Comment lines ``# sent_id = ...``, ``# doc_id = ...`` and ``# def_term = ...``
    are recognised; ``def_term`` is ignored when ``definition_markers`` is false.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    sentences: list[Sentence] = []
    rejects: list[str] = []
    meta: dict[str, str] = {}
    block: list[str] = []
    doc_id = "_"
    count = 0

    def flush():
        nonlocal meta, block, count
        if not block:
            meta = {}
            return
        count += 1
        meta.setdefault("doc_id", doc_id)
        if not definition_markers:
            meta.pop("def_term", None)
        sid = meta.get("sent_id", f"s{count}")
        try:
            sent = _parse_block(block, meta, sid)
            problem = validate_tokens(sent.tokens)
        except CorpusError as exc:
            problem = str(exc)
        if problem:
            msg = f"sentence {sid}: {problem}"
            log.warning("rejected %s", msg)
            rejects.append(msg)
        else:
            sentences.append(sent)
        meta, block = {}, []

    for raw in text.splitlines():
        line = raw.rstrip("\n")
        if not line.strip():
            flush()
        elif line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep:
                key, value = key.strip(), value.strip()
                if key in ("newdoc id", "newdoc_id"):
                    doc_id = value
                else:
                    meta[key] = value
        else:
            block.append(line)
    flush()
    return Corpus(tuple(sentences), tuple(rejects))


def format_conllu(corpus: Corpus | Iterable[Sentence]) -> str:
    out = []
    for sent in corpus:
        out.append(f"# sent_id = {sent.id}")
        out.append(f"# doc_id = {sent.doc_id}")
        if sent.definition_term:
            out.append(f"# def_term = {sent.definition_term}")
        for t in sent.tokens:
            out.append("\t".join([str(t.index), t.surface, t.lemma, t.pos, "_", "_",
                                  str(t.head), t.deprel, "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def write_conllu(corpus: Corpus | Iterable[Sentence], path: str | Path) -> None:
    Path(path).write_text(format_conllu(corpus), encoding="utf-8")


@dataclass(frozen=True)
class RelationInventory:
    labels: tuple[str, ...]
    predicate_vocabulary: frozenset[str]

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def positive_labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl in self.labels if lbl != NO_RELATION)


def predicate_name(label: str) -> str:
    """Rule-side spelling of a relation label (``HasA`` -> ``hasA``)."""
    return label[:1].lower() + label[1:]


def label_for_predicate(pred: str, inventory: RelationInventory) -> str | None:
    for name in (*inventory.labels, *sorted(inventory.predicate_vocabulary)):
        if predicate_name(name) == predicate_name(pred):
            return name
    return None


def parse_relation_inventory(lines: Iterable[str]) -> RelationInventory:
    labels: list[str] = []
    extra: list[str] = []
    seen: set[str] = set()
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        target = labels
        if line.startswith(_PREDICATE_ONLY):
            line = line[len(_PREDICATE_ONLY):].strip()
            target = extra
        if line in seen:
            raise CorpusError(f"duplicate relation name {line!r}")
        seen.add(line)
        target.append(line)
    if NO_RELATION not in labels:
        log.warning("relation inventory lacks %s; appending it", NO_RELATION)
        labels.append(NO_RELATION)
    vocab = frozenset(lbl for lbl in labels if lbl != NO_RELATION) | frozenset(extra)
    return RelationInventory(tuple(labels), vocab)


def load_relation_inventory(path: str | Path | None = None) -> RelationInventory:
    """Load an inventory file; ``None`` loads the bundled 19-label default."""
    if path is None:
        text = resources.files("relkg").joinpath("data", "relations.txt").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read inventory {path}: {exc}") from exc
    return parse_relation_inventory(text.splitlines())


@dataclass
class MentionStore:
    """Labeled set L, unlabeled set U and promoted set L_U.

    Mentions are identified by their ``key`` attribute.
    """

    inventory: RelationInventory
    labeled: list = field(default_factory=list)
    unlabeled: list = field(default_factory=list)
    promoted: list = field(default_factory=list)

    def __post_init__(self):
        for _, label in [*self.labeled, *self.promoted]:
            self._check_label(label)
        lkeys = {m.key for m, _ in self.labeled}
        ukeys = {m.key for m in self.unlabeled}
        pkeys = {m.key for m, _ in self.promoted}
        if lkeys & ukeys:
            raise CorpusError("labeled and unlabeled mentions overlap")
        if lkeys & pkeys:
            raise CorpusError("promoted mentions overlap the labeled set")

    def _check_label(self, label: str) -> None:
        if label not in self.inventory:
            raise CorpusError(f"label {label!r} is not in the relation inventory")

    def promote(self, items: Sequence[tuple[object, str]]) -> None:
        keys = {m.key for m, _ in items}
        present = {m.key for m in self.unlabeled}
        missing = keys - present
        if missing:
            raise CorpusError(f"cannot promote mentions not in U: {sorted(missing)[:3]}")
        for _, label in items:
            self._check_label(label)
        self.unlabeled = [m for m in self.unlabeled if m.key not in keys]
        self.promoted.extend(items)

    def training_pairs(self) -> list:
        return [*self.labeled, *self.promoted]
