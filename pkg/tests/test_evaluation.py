import json

import pytest
from hypothesis import given, strategies as st

from relkg import evaluation as ev
from relkg.ruleset import parse_rules

N = "NoRelation"

# (gold, predicted, {relation: (tp, fp, fn)}, micro (tp, fp, fn), micro (P, R, F1))
FIXTURES = [
    (["Causes", "Causes", "PartOf", N, N, "PartOf"],
     ["Causes", "PartOf", "PartOf", "Causes", N, N],
     {"Causes": (1, 1, 1), "PartOf": (1, 1, 1)}, (2, 2, 2), (50.0, 50.0, 50.0)),
    ([N, N, N], [N, "HasA", "HasA"],
     {"HasA": (0, 2, 0)}, (0, 2, 0), (0.0, 0.0, 0.0)),
    (["UsedFor", "UsedFor", "UsedFor", "Enables", N],
     ["UsedFor", "UsedFor", "Enables", N, N],
     {"UsedFor": (2, 0, 1), "Enables": (0, 1, 1)}, (2, 1, 2), (200 / 3, 50.0, 400 / 7)),
]


@pytest.mark.parametrize("gold, pred, per, micro, prf", FIXTURES)
def test_hand_confusions(gold, pred, per, micro, prf):
    r = ev.score_lists(pred, gold)
    assert {k: (s.tp, s.fp, s.fn) for k, s in r.per_relation.items()} == per
    assert (r.micro.tp, r.micro.fp, r.micro.fn) == micro
    assert (r.precision, r.recall, r.f1) == pytest.approx(prf, abs=1e-12)


def test_report_text():
    r = ev.score_lists(FIXTURES[0][1], FIXTURES[0][0], "dev")
    lines = r.format().splitlines()
    assert lines[0] == "split: dev"
    assert lines[1].split() == ["relation", "TP", "FP", "FN", "P", "R", "F1"]
    assert lines[-1].split() == ["micro", "2", "2", "2", "50.0", "50.0", "50.0"]
    assert json.loads(json.dumps(r.as_dict()))["micro"]["f1"] == 50.0


def test_key_mismatch():
    with pytest.raises(ValueError, match="missing predictions"):
        ev.score({"a": N}, {"a": N, "b": "Causes"})
    with pytest.raises(ValueError):
        ev.score_lists([N], [N, N])


labels = st.sampled_from(["Causes", "PartOf", "HasA", N])


@given(st.lists(st.tuples(labels, labels), min_size=1, max_size=40), st.randoms())
def test_order_invariance_and_tp_sum(pairs, rnd):
    gold, pred = [g for g, _ in pairs], [p for _, p in pairs]
    a = ev.score_lists(pred, gold)
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    b = ev.score_lists([pred[i] for i in idx], [gold[i] for i in idx])
    assert a.f1 == b.f1 and a.micro == b.micro
    assert sum(s.tp for s in a.per_relation.values()) == a.micro.tp


@given(st.lists(st.sampled_from(["Causes", "PartOf", "HasA"]), min_size=1, max_size=30))
def test_self_score_is_perfect(p):
    r = ev.score_lists(p, p)
    assert r.precision == r.recall == 100.0


def test_split_fractions(bundled):
    sp = ev.split_fractions(bundled.gold, seed=7)
    n = len(bundled.gold)
    assert len(sp.dev) == round(0.15 * n) and len(sp.test) == round(0.15 * n)
    rest = n - len(sp.dev) - len(sp.test)
    assert len(sp.labeled) == round(0.2 * rest)
    assert len(sp.labeled) + len(sp.unlabeled) == rest
    keys = [m.key for m, _ in sp.labeled] + [m.key for m in sp.unlabeled] + \
        [m.key for m, _ in sp.dev] + [m.key for m, _ in sp.test]
    assert len(set(keys)) == n
    assert [m.key for m, _ in sp.unlabeled_gold] == [m.key for m in sp.unlabeled]
    again = ev.split_fractions(bundled.gold, seed=7)
    assert [m.key for m, _ in again.dev] == [m.key for m, _ in sp.dev]


def test_split_counts():
    items = [(i, "x") for i in range(120)]
    sp = ev.split_counts(items, ["u1", "u2"])
    assert len(sp.dev) == len(sp.test) == 53 and len(sp.labeled) == 14
    assert sp.unlabeled == ["u1", "u2"]
    with pytest.raises(ValueError):
        ev.split_counts(items[:100])


def test_subset_parsing():
    ids = parse_rules().ids
    assert ev.parse_subsets("all-singletons", ids) == [(r,) for r in ids]
    assert ev.parse_subsets("all", ids) == [ids]
    assert ev.parse_subsets("R2,R4,R6; R5", ids) == [("R2", "R4", "R6"), ("R5",)]
    assert ev.parse_subsets("R1;all", ids) == [("R1",), ids]
    assert ev.row_name(("R2", "R4"), ids) == "DualRE+R/{R2,R4}"
    assert ev.row_name(ids, ids) == "DualRE+R/{all}"
    assert ev.row_name((), ids) == "DualRE+Rules"


def test_ablate_plan():
    rules = parse_rules()
    seen = []

    def run(rs):
        seen.append(rs.ids)
        hits = len(rs)
        return ["Causes"] * hits + [N] * (6 - hits), [N], ""

    rows = ev.ablate(run, rules, [("R1",), ("R2", "R3")], ["Causes"] * 6, ["Causes"])
    assert [r.name for r in rows] == ["DualRE", "DualRE+Rules", "DualRE+R/{R1}", "DualRE+R/{R2,R3}"]
    assert seen[0] == () and seen[1] == rules.ids and seen[3] == ("R1", "R4", "R5", "R6")
    assert rows[1].dev.recall == 100.0
    table = ev.format_ablation(rows)
    assert table.splitlines()[0].split() == ["dev", "P", "dev", "R", "dev", "F1", "test", "P", "test", "R",
                                             "test", "F1"]
    assert json.loads(ev.ablation_json(rows))["rows"][0]["name"] == "DualRE"
    with pytest.raises(KeyError):
        ev.ablate(run, rules, [("R9",)], [], [])
