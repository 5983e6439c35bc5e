import json

import pytest
from hypothesis import given, settings, strategies as st

from relkg.corpus import Corpus, load_relation_inventory
from relkg.kgbuild import (KnowledgeGraph, Triple, build_corpus_graph, build_definition_graph, build_graph,
                           connected_entities, definition_blocks, merge_graphs, process_block, read_tsv)
from relkg.mentions import extract_noun_phrases

from conftest import POSITIONING, make_sentence

INVENTORY = load_relation_inventory()


class StubLabeler:
    """Labels by a lookup on the entity pair; unknown pairs get NoRelation."""

    def __init__(self, table, default=("NoRelation", 0.9)):
        self.table = table
        self.default = default
        self.seen = []

    def classify(self, mentions):
        self.seen.extend(m.entity_pair for m in mentions)
        return [self.table.get(m.entity_pair, self.default) for m in mentions]


ENTS = ["a", "b", "c", "d"]
RELS = ["Causes", "PartOf", "HasA"]
@st.composite
def graphs(draw):
    items = draw(st.lists(st.tuples(st.sampled_from(ENTS), st.sampled_from(RELS), st.sampled_from(ENTS),
                                    st.sampled_from(["s1", "s2", "s3"]),
                                    st.sampled_from([0.25, 0.5, 0.75, 1.0])), max_size=8))
    extra = draw(st.sets(st.sampled_from(ENTS + ["e"]), max_size=2))
    return KnowledgeGraph.from_triples([Triple(*x) for x in items if x[0] != x[2]], extra)


@settings(max_examples=100)
@given(graphs(), graphs(), graphs())
def test_merge_algebra(a, b, c):
    assert merge_graphs(a, b) == merge_graphs(b, a)
    assert merge_graphs(merge_graphs(a, b), c) == merge_graphs(a, merge_graphs(b, c))
    assert merge_graphs(a, a) == a
    assert merge_graphs(a, b).to_tsv() == merge_graphs(b, a).to_tsv()


def test_triple_rules():
    with pytest.raises(ValueError):
        Triple("a", "NoRelation", "b")
    with pytest.raises(ValueError):
        Triple("a", "Causes", "a")


def test_duplicate_keeps_best_provenance():
    g = KnowledgeGraph.from_triples([Triple("a", "Causes", "b", "s2", 0.5), Triple("a", "Causes", "b", "s9", 0.8),
                                     Triple("a", "Causes", "b", "s1", 0.8)])
    assert len(g) == 1
    assert g.triples[("a", "Causes", "b")].sentence_id == "s1"


def test_tsv_and_json_roundtrip(tmp_path):
    g = KnowledgeGraph.from_triples([Triple("b", "HasA", "a", "s1", 0.123456789), Triple("a", "Causes", "b", "s2", 1)])
    g.write(tmp_path / "kg.tsv", tmp_path / "kg.json")
    lines = (tmp_path / "kg.tsv").read_text().splitlines()
    assert lines == ["a\tCauses\tb\ts2\t1.000000", "b\tHasA\ta\ts1\t0.123457"]
    back = read_tsv(tmp_path / "kg.tsv")
    assert set(back.triples) == set(g.triples)
    data = json.loads((tmp_path / "kg.json").read_text())
    assert data["entities"] == ["a", "b"] and len(data["triples"]) == 2
    (tmp_path / "bad.tsv").write_text("a\tb\n")
    with pytest.raises(ValueError, match=":1:"):
        read_tsv(tmp_path / "bad.tsv")


def definition_corpus():
    # two definition sentences for "positioning", then one ordinary sentence
    first = make_sentence([("Positioning", "NOUN", 2, "nsubj"), ("shapes", "VERB", 0, "root"),
                           ("brand", "NOUN", 4, "compound"), ("image", "NOUN", 2, "obj")],
                          "d1", "doc", "positioning")
    second = make_sentence([("Brand", "NOUN", 2, "compound"), ("image", "NOUN", 3, "nsubj"),
                            ("drives", "VERB", 0, "root"), ("loyalty", "NOUN", 3, "obj")],
                           "d2", "doc", "positioning")
    plain = make_sentence(POSITIONING, "p1", "doc")
    return Corpus((first, second, plain))


def test_definition_blocks():
    corpus = definition_corpus()
    blocks = definition_blocks(corpus)
    assert [(t, [s.id for s in ss]) for t, ss in blocks] == [("positioning", ["d1", "d2"])]


def test_important_set_grows():
    corpus = definition_corpus()
    labeler = StubLabeler({("positioning", "brand_image"): ("UsedFor", 0.2),
                           ("brand_image", "loyalty"): ("Causes", 0.3)})
    term, sentences = definition_blocks(corpus)[0]
    triples, important = process_block(term, sentences, labeler)
    # "brand" heads its own NP as a compound noun; "image" only appears inside "brand image"
    assert important == {"positioning", "brand", "brand_image", "loyalty"}
    keys = {t.key for t in triples}
    # low confidence is kept inside definition blocks
    assert ("positioning", "UsedFor", "brand_image") in keys
    assert ("brand_image", "Causes", "loyalty") in keys
    # every classified candidate touches the important set
    assert labeler.seen and all(set(p) & important for p in labeler.seen)


def test_connected_entities_respects_path():
    sent = make_sentence(POSITIONING)
    phrases = extract_noun_phrases(sent)
    near = connected_entities(sent, {"product_positioning"}, phrases, max_path=2)
    assert "place" in near and "a_target_market_segment" in near
    assert "that_market_segment" not in near
    assert "that_market_segment" in connected_entities(sent, {"product_positioning"}, phrases, max_path=4)


def test_corpus_graph_threshold():
    corpus = definition_corpus()
    labeler = StubLabeler({("product_positioning", "place"): ("UsedFor", 0.9),
                           ("place", "product_positioning"): ("UsedBy", 0.4)})
    g = build_corpus_graph(corpus, labeler, threshold=0.5)
    assert set(g.triples) == {("product_positioning", "UsedFor", "place")}
    assert all(t.sentence_id == "p1" for t in g.triples.values())
    assert set(build_corpus_graph(corpus, labeler, threshold=0.3).triples) == {
        ("product_positioning", "UsedFor", "place"), ("place", "UsedBy", "product_positioning")}


def test_build_graph_is_union_and_valid():
    corpus = definition_corpus()
    labeler = StubLabeler({("positioning", "brand_image"): ("UsedFor", 0.2),
                           ("product_positioning", "place"): ("UsedFor", 0.9)})
    g = build_graph(corpus, labeler)
    assert g == merge_graphs(build_definition_graph(corpus, labeler), build_corpus_graph(corpus, labeler))
    assert all(t.relation in INVENTORY.labels and t.relation != "NoRelation" for t in g.triples.values())
    assert g.to_tsv() == build_graph(corpus, labeler).to_tsv()


def test_no_definitions_warns(caplog):
    corpus = Corpus((make_sentence(POSITIONING),))
    assert len(build_definition_graph(corpus, StubLabeler({}))) == 0
    assert "no definition sentences" in caplog.text
