"""Seeded synthetic corpora with planted, rule-consistent relations.

Each sentence has the shape ``SUBJ VERB OBJ [ADP NP [ADP NP]] .`` where the
verb is rooted, noun phrases are head-final (``ADJ NOUN``) and optional
prepositional phrases hang off the object.  The verb is drawn from the
templates of the sentence's relation.  Planted implication rules are closed
over the generated facts: every implied fact gets its own sentence, with the
arguments swapped when the rule head swaps them.  Only the subject-to-object
mention of a sentence carries a relation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import NO_RELATION, Corpus, RelationInventory, Sentence, Token, normalize_entity, \
    predicate_name, write_conllu
from .mentions import RelationMention, generate_candidates, write_mentions
from .ruleset import RuleSet, parse_rules

DEFAULT_TEMPLATES: dict[str, tuple[str, ...]] = {
    "Causes": ("causes", "triggers", "drives"),
    "Enables": ("enables", "facilitates", "drives"),
    "Affects": ("affects", "influences", "shapes"),
    "PartOf": ("constitutes", "composes"),
    "HasA": ("possesses", "owns"),
    "RelatedTo": ("relates", "accompanies"),
    "Synonym": ("equals", "mirrors"),
    "UsedFor": ("serves", "supports"),
    "DependsOn": ("requires", "needs"),
    "LeadsTo": ("yields", "produces"),
    "HasProperty": ("exhibits", "displays"),
    "UsedBy": ("benefits", "attracts"),
}

ADJECTIVES = ("new", "loyal", "premium", "local", "digital", "strong", "niche", "global",
              "price", "mass", "direct", "early", "high", "low", "core", "social")
NOUNS = ("segment", "brand", "consumer", "product", "market", "campaign", "channel",
         "strategy", "trial", "loyalty", "positioning", "pricing", "demand", "promotion",
         "awareness", "retailer", "competitor", "preference", "distribution", "lifecycle",
         "adoption", "profit", "share", "innovation", "sampling", "selection", "message",
         "attitude", "benefit", "budget")
CONTEXT_NOUNS = ("period", "region", "quarter", "context", "industry", "sector", "season",
                 "country", "city", "category")
PREPOSITIONS = ("in", "during", "across", "within", "for")

# Implication rules of the bundled rule file that the generator can plant, by id.
PLANTABLE = ("R1", "R3", "R4", "R5", "R6")


class SynthError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_entities: int = 120
    n_sentences: int = 231
    templates: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    mixture: dict[str, float] | None = None
    planted_rules: tuple[str, ...] = PLANTABLE
    labeled_fraction: float = 0.2
    n_definition_blocks: int = 8
    block_length: int = 3
    pp_probs: tuple[float, float, float] = (0.1, 0.6, 0.3)
    seed: int = 7

    def __post_init__(self):
        if not 0 < self.labeled_fraction <= 1:
            raise SynthError("labeled_fraction must lie in (0, 1]")
        unknown = set(self.planted_rules) - set(PLANTABLE)
        if unknown:
            raise SynthError(f"cannot plant rules {sorted(unknown)}")


@dataclass
class SynthCorpus:
    corpus: Corpus
    gold: list[tuple[RelationMention, str]]
    facts: set[tuple[str, str, str]]
    sentence_relations: list[str]
    spec: SynthSpec


def _implications(ruleset: RuleSet, planted: tuple[str, ...]):
    """(body_predicate, head_predicate, swapped) for each planted 2-literal implication."""
    out = []
    for rule in ruleset:
        if rule.id not in planted:
            continue
        neg = [l for l in rule.literals if not l.positive]
        pos = [l for l in rule.literals if l.positive]
        if len(neg) == 1 and len(pos) == 1:
            out.append((neg[0].predicate, pos[0].predicate, neg[0].args != pos[0].args))
    return out


class _Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.by_pred = {predicate_name(r): r for r in spec.templates}
        self.rules = _implications(parse_rules(), spec.planted_rules)
        relations = list(spec.mixture or spec.templates)
        for r in relations:
            if not spec.templates.get(r):
                raise SynthError(f"no templates for relation {r}")
        weights = np.array([(spec.mixture or {}).get(r, 1.0) for r in relations], dtype=float)
        self.relations = relations
        self.weights = weights / weights.sum()
        self.entities = self._entity_pool()

    def _entity_pool(self) -> list[tuple[str, ...]]:
        pool = [(n,) for n in NOUNS] + [(a, n) for a in ADJECTIVES for n in NOUNS]
        if self.spec.n_entities > len(pool):
            raise SynthError(f"at most {len(pool)} entities are available")
        order = self.rng.permutation(len(pool))[: self.spec.n_entities]
        return [pool[i] for i in sorted(order)]

    def closure(self, label: str) -> list[tuple[str, bool]]:
        """Facts forced by planted rules as (label, swapped) pairs, the seed fact first."""
        out = [(label, False)]
        frontier = [(predicate_name(label), False)]
        seen = {(predicate_name(label), False)}
        while frontier:
            pred, flipped = frontier.pop(0)
            for body, head, swapped in self.rules:
                if body != pred:
                    continue
                state = (head, flipped != swapped)
                if state in seen:
                    continue
                seen.add(state)
                frontier.append(state)
                if head not in self.by_pred:
                    raise SynthError(f"no templates for implied relation {head}")
                out.append((self.by_pred[head], state[1]))
        return out

    def pick_relation(self, max_group: int) -> str:
        sizes = np.array([len(self.closure(r)) for r in self.relations])
        w = np.where(sizes <= max_group, self.weights, 0.0)
        if w.sum() == 0:
            raise SynthError("no relation fits the remaining sentence budget")
        return self.relations[self.rng.choice(len(self.relations), p=w / w.sum())]

    def pick_pair(self, first: int | None = None) -> tuple[int, int]:
        a = int(self.rng.integers(len(self.entities))) if first is None else first
        b = int(self.rng.integers(len(self.entities) - 1))
        return a, b + (b >= a)

    def sentence(self, sid: str, label: str, subj: int, obj: int, doc_id: str,
                 def_term: str | None = None):
        verb = self.spec.templates[label][self.rng.integers(len(self.spec.templates[label]))]
        n_pp = int(self.rng.choice(3, p=self.spec.pp_probs))
        tokens: list[Token] = []

        def noun_phrase(words: tuple[str, ...], head_of_np: int, rel: str) -> int:
            start = len(tokens) + 1
            noun_idx = start + len(words) - 1
            for w in words[:-1]:
                tokens.append(Token(len(tokens) + 1, w, "ADJ", noun_idx, "amod", w))
            tokens.append(Token(noun_idx, words[-1], "NOUN", head_of_np, rel, words[-1]))
            return noun_idx

        subj_words, obj_words = self.entities[subj], self.entities[obj]
        verb_idx = len(subj_words) + 1
        subj_head = noun_phrase(subj_words, verb_idx, "nsubj")
        tokens.append(Token(verb_idx, verb, "VERB", 0, "root", verb))
        obj_head = noun_phrase(obj_words, verb_idx, "obj")
        anchor = obj_head
        for _ in range(n_pp):
            prep = PREPOSITIONS[self.rng.integers(len(PREPOSITIONS))]
            ctx = CONTEXT_NOUNS[self.rng.integers(len(CONTEXT_NOUNS))]
            adp_idx = len(tokens) + 1
            tokens.append(Token(adp_idx, prep, "ADP", adp_idx + 1, "case", prep))
            tokens.append(Token(adp_idx + 1, ctx, "NOUN", anchor, "nmod", ctx))
            anchor = adp_idx + 1
        tokens.append(Token(len(tokens) + 1, ".", "PUNCT", verb_idx, "punct", "."))
        sent = Sentence(sid, tuple(tokens), doc_id, def_term)
        subj_span = (subj_head - len(subj_words) + 1, subj_head)
        obj_span = (obj_head - len(obj_words) + 1, obj_head)
        return sent, subj_span, obj_span

    def run(self) -> SynthCorpus:
        spec = self.spec
        plan: list[tuple[str, int, int, str, str | None]] = []  # label, subj, obj, doc, def_term
        budget = spec.n_sentences
        n_blocks = min(spec.n_definition_blocks, budget // max(spec.block_length, 1))
        single = [r for r in self.relations if len(self.closure(r)) == 1]
        for b in range(n_blocks):
            term = int(self.rng.integers(len(self.entities)))
            term_id = normalize_entity(" ".join(self.entities[term]))
            current = term
            for _ in range(spec.block_length):
                label = single[int(self.rng.integers(len(single)))]
                _, nxt = self.pick_pair(current)
                plan.append((label, current, nxt, f"def{b + 1}", term_id))
                current = nxt
        while len(plan) < budget:
            label = self.pick_relation(budget - len(plan))
            a, b = self.pick_pair()
            for lbl, swapped in self.closure(label):
                plan.append((lbl, b, a, "body", None) if swapped else (lbl, a, b, "body", None))

        sentences, annotated, sentence_relations = [], [], []
        facts: set[tuple[str, str, str]] = set()
        for k, (label, a, b, doc, term) in enumerate(plan, start=1):
            sent, s_span, o_span = self.sentence(f"syn{k:04d}", label, a, b, doc, term)
            sentences.append(sent)
            sentence_relations.append(label)
            ea = normalize_entity(" ".join(self.entities[a]))
            eb = normalize_entity(" ".join(self.entities[b]))
            facts.add((label, ea, eb))
            annotated.append((sent, s_span, o_span, label))

        corpus = Corpus(tuple(sentences))
        gold = []
        labels = {}
        for sent, s_span, o_span, label in annotated:
            labels[(sent.id, *s_span, *o_span)] = label
        for m in generate_candidates(corpus, math.inf):
            gold.append((m, labels.get(m.key, NO_RELATION)))
        return SynthCorpus(corpus, gold, facts, sentence_relations, spec)


def generate(spec: SynthSpec | None = None) -> SynthCorpus:
    """Generate a corpus and gold labels for every ordered noun-phrase pair."""
    return _Generator(spec or SynthSpec()).run()


def bundled_corpus() -> SynthCorpus:
    """The default 231-sentence corpus used by the end-to-end checks."""
    return generate(SynthSpec())


def check_inventory(synth: SynthCorpus, inventory: RelationInventory) -> None:
    missing = {lbl for _, lbl in synth.gold} - set(inventory.labels)
    if missing:
        raise SynthError(f"generated labels missing from inventory: {sorted(missing)}")


def write_synth(synth: SynthCorpus, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.conllu", "gold": out / "gold.jsonl"}
    write_conllu(synth.corpus, paths["corpus"])
    write_mentions(synth.gold, paths["gold"])
    return paths
