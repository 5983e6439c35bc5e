import pytest

from relkg import evaluation as ev
from relkg import synthgen
from relkg.corpus import MentionStore, Sentence, Token, load_relation_inventory

# (surface, upos, head, deprel) rows for hand-built parses
POSITIONING = [
    ("Product", "NOUN", 2, "compound"),
    ("positioning", "NOUN", 3, "nsubj"),
    ("takes", "VERB", 0, "root"),
    ("place", "NOUN", 3, "obj"),
    ("within", "ADP", 9, "case"),
    ("a", "DET", 9, "det"),
    ("target", "NOUN", 9, "compound"),
    ("market", "NOUN", 9, "compound"),
    ("segment", "NOUN", 3, "obl"),
    ("and", "CCONJ", 11, "cc"),
    ("tells", "VERB", 3, "conj"),
    ("us", "PRON", 11, "obj"),
    ("how", "ADV", 16, "advmod"),
    ("we", "PRON", 16, "nsubj"),
    ("can", "AUX", 16, "aux"),
    ("compete", "VERB", 11, "ccomp"),
    ("most", "ADV", 18, "advmod"),
    ("effectively", "ADV", 16, "advmod"),
    ("in", "ADP", 22, "case"),
    ("that", "DET", 22, "det"),
    ("market", "NOUN", 22, "compound"),
    ("segment", "NOUN", 16, "obl"),
    (".", "PUNCT", 3, "punct"),
]


def make_sentence(rows, sid="s1", doc_id="_", definition_term=None) -> Sentence:
    tokens = tuple(Token(i, w, pos, head, rel, w.lower())
                   for i, (w, pos, head, rel) in enumerate(rows, start=1))
    return Sentence(sid, tokens, doc_id, definition_term)


def conllu_block(rows, sid=None, def_term=None) -> str:
    lines = []
    if sid:
        lines.append(f"# sent_id = {sid}")
    if def_term:
        lines.append(f"# def_term = {def_term}")
    for i, (w, pos, head, rel) in enumerate(rows, start=1):
        lines.append("\t".join([str(i), w, w.lower(), pos, "_", "_", str(head), rel, "_", "_"]))
    return "\n".join(lines) + "\n\n"


@pytest.fixture(scope="session")
def inventory():
    return load_relation_inventory()


@pytest.fixture(scope="session")
def bundled():
    return synthgen.bundled_corpus()


@pytest.fixture(scope="session")
def bundled_split(bundled):
    return ev.split_fractions(bundled.gold, seed=7)


@pytest.fixture
def bundled_store(bundled_split, inventory):
    return MentionStore(inventory, list(bundled_split.labeled), list(bundled_split.unlabeled))
