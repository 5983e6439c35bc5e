"""Precision/recall/F1 scoring, data splits and the rule-ablation harness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import NO_RELATION, MentionStore, RelationInventory
from .ruleset import RuleSet


@dataclass
class RelationScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    """Micro and per-relation scores in percent; NoRelation is the negative class."""

    micro: RelationScore
    per_relation: dict[str, RelationScore]
    split: str = ""

    @property
    def precision(self) -> float:
        return self.micro.precision

    @property
    def recall(self) -> float:
        return self.micro.recall

    @property
    def f1(self) -> float:
        return self.micro.f1

    def as_dict(self) -> dict:
        return {"split": self.split, "micro": self.micro.as_dict(),
                "per_relation": {r: s.as_dict() for r, s in sorted(self.per_relation.items())}}

    def format(self) -> str:
        rows = [("relation", "TP", "FP", "FN", "P", "R", "F1")]
        for name, s in sorted(self.per_relation.items()):
            rows.append((name, str(s.tp), str(s.fp), str(s.fn), f"{s.precision:.1f}",
                         f"{s.recall:.1f}", f"{s.f1:.1f}"))
        m = self.micro
        rows.append(("micro", str(m.tp), str(m.fp), str(m.fn), f"{m.precision:.1f}",
                     f"{m.recall:.1f}", f"{m.f1:.1f}"))
        title = f"split: {self.split}\n" if self.split else ""
        return title + _align(rows)


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def score(predictions: Mapping, gold: Mapping, split: str = "",
          no_relation: str = NO_RELATION) -> EvalReport:
    """Score ``predictions`` against ``gold``; both map mention keys to labels."""
    missing_pred = set(gold) - set(predictions)
    missing_gold = set(predictions) - set(gold)
    if missing_pred or missing_gold:
        raise ValueError(f"key mismatch: missing predictions for {sorted(map(str, missing_pred))[:5]}, "
                         f"missing gold for {sorted(map(str, missing_gold))[:5]}")
    per: dict[str, RelationScore] = {}
    for key, g in gold.items():
        p = predictions[key]
        if g != no_relation:
            per.setdefault(g, RelationScore())
        if p != no_relation:
            per.setdefault(p, RelationScore())
        if p == g:
            if g != no_relation:
                per[g].tp += 1
            continue
        if p != no_relation:
            per[p].fp += 1
        if g != no_relation:
            per[g].fn += 1
    micro = RelationScore(sum(s.tp for s in per.values()), sum(s.fp for s in per.values()),
                          sum(s.fn for s in per.values()))
    return EvalReport(micro, per, split)


def score_lists(predicted: Sequence[str], gold: Sequence[str], split: str = "") -> EvalReport:
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lists differ in length")
    return score(dict(enumerate(predicted)), dict(enumerate(gold)), split)


def metrics_dict(report: EvalReport, prefix: str = "dev") -> dict:
    return {f"{prefix}_precision": report.precision, f"{prefix}_recall": report.recall,
            f"{prefix}_f1": report.f1}


# -- splits ----------------------------------------------------------------

@dataclass
class Splits:
    labeled: list
    unlabeled: list
    dev: list
    test: list
    unlabeled_gold: list = field(default_factory=list)

    def store(self, inventory: RelationInventory) -> MentionStore:
        return MentionStore(inventory, list(self.labeled), [m for m in self.unlabeled])


def split_counts(labeled: Sequence, unlabeled: Sequence = (), n_dev: int = 53, n_test: int = 53,
                 seed: int = 7) -> Splits:
    """Hold out ``n_dev`` and ``n_test`` annotated mentions; the rest of the annotations form L."""
    if n_dev + n_test >= len(labeled):
        raise ValueError(f"cannot hold out {n_dev}+{n_test} of {len(labeled)} annotated mentions")
    order = np.random.default_rng(seed).permutation(len(labeled))
    items = [labeled[i] for i in order]
    return Splits(items[n_dev + n_test:], list(unlabeled), items[:n_dev], items[n_dev:n_dev + n_test])


def split_fractions(gold: Sequence, dev_fraction: float = 0.15, test_fraction: float = 0.15,
                    labeled_fraction: float = 0.2, seed: int = 7) -> Splits:
    """Fractional splits of a fully annotated (synthetic) mention list.

    After holding out dev and test, ``labeled_fraction`` of the remainder
    keeps its labels (L); the rest becomes U with its gold kept aside.
    """
    n = len(gold)
    order = np.random.default_rng(seed).permutation(n)
    items = [gold[i] for i in order]
    n_dev, n_test = round(dev_fraction * n), round(test_fraction * n)
    dev, test, rest = items[:n_dev], items[n_dev:n_dev + n_test], items[n_dev + n_test:]
    n_lab = max(1, round(labeled_fraction * len(rest)))
    key = lambda pair: pair[0].key
    labeled = sorted(rest[:n_lab], key=key)
    hidden = sorted(rest[n_lab:], key=key)
    return Splits(labeled, [m for m, _ in hidden], sorted(dev, key=key), sorted(test, key=key), hidden)


# -- ablation ----------------------------------------------------------------

@dataclass
class AblationRow:
    name: str
    removed: tuple[str, ...]
    dev: EvalReport
    test: EvalReport
    promotion_log: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "removed": list(self.removed),
                "dev": {k: v for k, v in asdict(self.dev.micro).items()} | _prf(self.dev),
                "test": {k: v for k, v in asdict(self.test.micro).items()} | _prf(self.test)}


def _prf(report: EvalReport) -> dict:
    return {"precision": report.precision, "recall": report.recall, "f1": report.f1}


def row_name(removed: Iterable[str], all_ids: Sequence[str]) -> str:
    removed = tuple(removed)
    if not removed:
        return "DualRE+Rules"
    if set(removed) == set(all_ids):
        return "DualRE+R/{all}"
    return "DualRE+R/{" + ",".join(removed) + "}"


def parse_subsets(text: str, rule_ids: Sequence[str]) -> list[tuple[str, ...]]:
    """``;``-separated subsets: comma lists such as ``R2,R4,R6``, ``all`` or ``all-singletons``."""
    out: list[tuple[str, ...]] = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk == "all-singletons":
            out.extend((rid,) for rid in rule_ids)
        elif chunk == "all":
            out.append(tuple(rule_ids))
        else:
            out.append(tuple(x.strip() for x in chunk.split(",") if x.strip()))
    return out


def ablate(run: Callable[[RuleSet], tuple[list[str], list[str], str]], ruleset: RuleSet,
           rule_subsets: Sequence[Iterable[str]], dev_gold: Sequence[str], test_gold: Sequence[str],
           include_reference: bool = True) -> list[AblationRow]:
    """Rerun training with each rule subset removed and score dev and test.

    ``run(rules)`` trains from scratch (same seed) and returns dev predictions,
    test predictions and the promotion log.  With ``include_reference`` the
    no-rules baseline and the full rule set head the table.
    """
    subsets = [tuple(s) for s in rule_subsets]
    for s in subsets:
        unknown = set(s) - set(ruleset.ids)
        if unknown:
            raise KeyError(f"unknown rule ids: {sorted(unknown)}")
    plan: list[tuple[str, tuple[str, ...], RuleSet]] = []
    if include_reference:
        plan.append(("DualRE", tuple(ruleset.ids), RuleSet()))
        plan.append(("DualRE+Rules", (), ruleset))
    for s in subsets:
        plan.append((row_name(s, ruleset.ids), s, ruleset.without(s)))
    rows = []
    for name, removed, rules in plan:
        dev_pred, test_pred, promo = run(rules)
        rows.append(AblationRow(name, removed, score_lists(dev_pred, dev_gold, "dev"),
                                score_lists(test_pred, test_gold, "test"), promo))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    table = [("", "dev P", "dev R", "dev F1", "test P", "test R", "test F1")]
    for r in rows:
        table.append((r.name, *(f"{v:.1f}" for v in (r.dev.precision, r.dev.recall, r.dev.f1,
                                                     r.test.precision, r.test.recall, r.test.f1))))
    return _align(table)


def ablation_json(rows: Sequence[AblationRow]) -> str:
    return json.dumps({"columns": ["dev", "test"], "rows": [r.as_dict() for r in rows]},
                      indent=2, sort_keys=True) + "\n"
