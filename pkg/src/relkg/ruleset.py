"""Weighted first-order clauses over binary relation predicates.

Rules are stored in clause form (a disjunction of literals).  Truth of a
ground clause under a fuzzy valuation uses the Lukasiewicz operators:
``not a = 1 - a`` and ``a or b = min(1, a + b)``.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import RelationInventory, label_for_predicate, normalize_entity, predicate_name

log = logging.getLogger(__name__)

Atom = tuple[str, str, str]  # (predicate, subject constant, object constant)

DEFAULT_HARD_PENALTY = 100.0
MAX_BRUTE_FORCE_ATOMS = 20
WEIGHT_BOUND = 10.0

_ATOM_RE = re.compile(r"(!?)\s*([A-Za-z_]\w*)\s*\(([^()]*)\)")


class RuleParseError(ValueError):
    pass


class DomainTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[str, str]
    positive: bool = True

    def ground(self, sub: Mapping[str, str]) -> Atom:
        return (self.predicate, sub[self.args[0]], sub[self.args[1]])

    def __str__(self) -> str:
        return f"{'' if self.positive else '!'}{self.predicate}({','.join(self.args)})"


@dataclass(frozen=True)
class Rule:
    id: str
    literals: tuple[Literal, ...]
    weight: float = 1.0
    hard: bool = False

    @property
    def variables(self) -> tuple[str, ...]:
        seen: list[str] = []
        for lit in self.literals:
            for a in lit.args:
                if a not in seen:
                    seen.append(a)
        return tuple(seen)

    @property
    def predicates(self) -> frozenset[str]:
        return frozenset(lit.predicate for lit in self.literals)

    def __str__(self) -> str:
        w = "inf" if self.hard else repr(self.weight)
        return f"[{self.id}] {w} " + " | ".join(str(lit) for lit in self.literals)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()

    def __iter__(self):
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.rules)

    @property
    def predicates(self) -> frozenset[str]:
        return frozenset().union(*(r.predicates for r in self.rules)) if self.rules else frozenset()

    def without(self, ids: Iterable[str]) -> RuleSet:
        drop = set(ids)
        unknown = drop - set(self.ids)
        if unknown:
            raise KeyError(f"unknown rule ids: {sorted(unknown)}")
        return RuleSet(tuple(r for r in self.rules if r.id not in drop))

    def with_weights(self, weights: Sequence[float]) -> RuleSet:
        it = iter(weights)
        return RuleSet(tuple(r if r.hard else replace(r, weight=float(next(it))) for r in self.rules))

    def soft_weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.rules if not r.hard], dtype=float)

    def dumps(self) -> str:
        return "".join(f"{rule}\n" for rule in self.rules)


@dataclass(frozen=True)
class GroundClause:
    rule_id: str
    substitution: tuple[tuple[str, str], ...]
    literals: tuple[tuple[Atom, bool], ...]

    @property
    def atoms(self) -> tuple[Atom, ...]:
        return tuple(dict.fromkeys(a for a, _ in self.literals))


# -- parsing -----------------------------------------------------------------

def _parse_atoms(text: str, lineno: int, negate: bool = False) -> list[Literal]:
    lits = []
    pos = 0
    text = text.strip()
    for m in _ATOM_RE.finditer(text):
        gap = text[pos:m.start()].strip()
        if gap not in ("", ",", "|", "^", "&"):
            raise RuleParseError(f"line {lineno}: cannot parse {gap!r}")
        pos = m.end()
        neg, pred, args = m.groups()
        arg_list = tuple(a.strip() for a in args.split(",")) if args.strip() else ()
        if len(arg_list) != 2:
            raise RuleParseError(f"line {lineno}: {pred} has arity {len(arg_list)}, expected 2")
        lits.append(Literal(pred, arg_list, positive=(neg == "") != negate))
    if text[pos:].strip() or not lits:
        raise RuleParseError(f"line {lineno}: cannot parse {text[pos:].strip() or text!r}")
    return lits


def parse_rule_line(line: str, lineno: int, rule_id: str,
                    inventory: RelationInventory | None = None) -> Rule:
    weight_text, _, body = line.strip().partition(" ")
    if weight_text.lower() in ("inf", "hard", "alpha"):
        weight, hard = math.inf, True
    else:
        try:
            weight, hard = float(weight_text), False
        except ValueError as exc:
            raise RuleParseError(f"line {lineno}: bad weight {weight_text!r}") from exc
    if ":-" in body:
        head_text, _, body_text = body.partition(":-")
        literals = _parse_atoms(body_text, lineno, negate=True) + _parse_atoms(head_text, lineno)
    elif "<-" in body:
        head_text, _, body_text = body.partition("<-")
        literals = _parse_atoms(body_text, lineno, negate=True) + _parse_atoms(head_text, lineno)
    else:
        literals = _parse_atoms(body, lineno)
    rule = Rule(rule_id, tuple(literals), weight, hard)
    if len(rule.variables) > 2:
        raise RuleParseError(f"line {lineno}: more than two variables {rule.variables}")
    if inventory is not None:
        for lit in literals:
            if label_for_predicate(lit.predicate, inventory) is None:
                raise RuleParseError(f"line {lineno}: unknown predicate {lit.predicate!r}")
    # canonical predicate spelling so atoms from labels and rules compare equal
    literals = tuple(replace(l, predicate=predicate_name(l.predicate)) for l in literals)
    return replace(rule, literals=literals)


def parse_rules_text(text: str, inventory: RelationInventory | None = None) -> RuleSet:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        rule_id = f"R{len(rules) + 1}"
        m = re.match(r"\[(\w+)\]\s*", line)
        if m:
            rule_id, line = m.group(1), line[m.end():]
        rules.append(parse_rule_line(line, lineno, rule_id, inventory))
    return RuleSet(tuple(rules))


def parse_rules(path: str | Path | None = None, inventory: RelationInventory | None = None) -> RuleSet:
    """Parse a rule file; ``None`` loads the bundled six-rule default with its weights."""
    if path is None:
        text = resources.files("relkg").joinpath("data", "rules.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_rules_text(text, inventory)


# -- evidence ----------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceDB:
    """Closed-world set of true ground atoms."""

    atoms: frozenset[Atom] = frozenset()
    extra_constants: frozenset[str] = field(default=frozenset())

    @classmethod
    def from_atoms(cls, atoms: Iterable[Atom]) -> EvidenceDB:
        return cls(frozenset((predicate_name(p), s, o) for p, s, o in atoms))

    @classmethod
    def from_labeled(cls, pairs: Iterable[tuple[object, str]], no_relation: str = "NoRelation") -> EvidenceDB:
        atoms = set()
        for mention, label in pairs:
            if label != no_relation:
                s, o = mention.entity_pair
                atoms.add((predicate_name(label), s, o))
        return cls(frozenset(atoms))

    @property
    def constants(self) -> frozenset[str]:
        out = set(self.extra_constants)
        for _, s, o in self.atoms:
            out.update((s, o))
        return frozenset(out)

    @property
    def predicates(self) -> frozenset[str]:
        return frozenset(p for p, _, _ in self.atoms)

    def __contains__(self, atom: Atom) -> bool:
        return atom in self.atoms

    def __len__(self) -> int:
        return len(self.atoms)

    def dumps(self) -> str:
        return "".join(f"{p}({s},{o})\n" for p, s, o in sorted(self.atoms))


def parse_evidence_text(text: str, inventory: RelationInventory | None = None) -> EvidenceDB:
    atoms = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _ATOM_RE.fullmatch(line)
        if not m or m.group(1):
            raise RuleParseError(f"evidence line {lineno}: expected predicate(e1,e2), got {line!r}")
        args = [a.strip() for a in m.group(3).split(",")]
        if len(args) != 2:
            raise RuleParseError(f"evidence line {lineno}: arity {len(args)}, expected 2")
        if inventory is not None and label_for_predicate(m.group(2), inventory) is None:
            raise RuleParseError(f"evidence line {lineno}: unknown predicate {m.group(2)!r}")
        atoms.append((m.group(2), normalize_entity(args[0]), normalize_entity(args[1])))
    return EvidenceDB.from_atoms(atoms)


def load_evidence(path: str | Path, inventory: RelationInventory | None = None) -> EvidenceDB:
    return parse_evidence_text(Path(path).read_text(encoding="utf-8"), inventory)


def sample_evidence(inventory: RelationInventory | None = None) -> EvidenceDB:
    """The bundled 14-atom ground-truth sample."""
    text = resources.files("relkg").joinpath("data", "evidence_sample.txt").read_text(encoding="utf-8")
    return parse_evidence_text(text, inventory)


# -- grounding and truth -----------------------------------------------------

def ground(rule: Rule, substitution: Mapping[str, str]) -> GroundClause:
    sub = {v: substitution[v] for v in rule.variables}
    return GroundClause(rule.id, tuple(sorted(sub.items())),
                        tuple((lit.ground(sub), lit.positive) for lit in rule.literals))


def groundings(rule: Rule, constants: Iterable[str]) -> Iterable[GroundClause]:
    """All |constants|^|vars| groundings of ``rule`` (variables ordered a1, a2 by appearance)."""
    consts = sorted(constants)
    variables = sorted(rule.variables)
    for values in itertools.product(consts, repeat=len(variables)):
        yield ground(rule, dict(zip(variables, values)))


def lukasiewicz_not(a: float) -> float:
    return 1.0 - a


def lukasiewicz_or(*values: float) -> float:
    return min(1.0, sum(values))


def lukasiewicz_and(*values: float) -> float:
    return max(0.0, sum(values) - (len(values) - 1))


def lukasiewicz_implies(body: float, head: float) -> float:
    return min(1.0, 1.0 - body + head)


def lukasiewicz_truth(clause: GroundClause, valuation: Mapping[Atom, float]) -> float:
    """Fuzzy truth of a ground clause; atoms missing from ``valuation`` are 0."""
    total = 0.0
    for atom, positive in clause.literals:
        v = float(valuation.get(atom, 0.0))
        total += v if positive else 1.0 - v
    return min(1.0, total)


def boolean_truth(clause: GroundClause, world: Mapping[Atom, bool]) -> bool:
    return any(bool(world.get(atom, False)) == positive for atom, positive in clause.literals)


# -- brute-force MLN semantics -----------------------------------------------

def domain_atoms(predicates: Iterable[str], constants: Iterable[str]) -> list[Atom]:
    consts = sorted(constants)
    return [(p, a, b) for p in sorted(predicates) for a in consts for b in consts]


def true_grounding_counts(ruleset: RuleSet, constants: Iterable[str],
                          world: Mapping[Atom, bool]) -> np.ndarray:
    consts = sorted(constants)
    return np.array([sum(boolean_truth(g, world) for g in groundings(r, consts)) for r in ruleset],
                    dtype=float)


def _world_log_weight(ruleset: RuleSet, counts: np.ndarray, n_groundings: np.ndarray) -> float:
    total = 0.0
    for rule, n, g in zip(ruleset, counts, n_groundings):
        if rule.hard:
            if n < g:
                return -math.inf
        else:
            total += rule.weight * n
    return total


def world_log_weights(ruleset: RuleSet, constants: Iterable[str],
                      predicates: Iterable[str] | None = None):
    """Enumerate every world; returns (atoms, worlds as bool matrix, log weights)."""
    consts = sorted(constants)
    preds = ruleset.predicates if predicates is None else frozenset(predicates) | ruleset.predicates
    atoms = domain_atoms(preds, consts)
    if len(atoms) > MAX_BRUTE_FORCE_ATOMS:
        raise DomainTooLarge(f"{len(atoms)} ground atoms means 2^{len(atoms)} worlds; "
                             f"brute force is limited to {MAX_BRUTE_FORCE_ATOMS} atoms")
    index = {a: i for i, a in enumerate(atoms)}
    ground_all = [list(groundings(r, consts)) for r in ruleset]
    n_ground = np.array([len(g) for g in ground_all], dtype=float)
    worlds = np.array(list(itertools.product((False, True), repeat=len(atoms))), dtype=bool)
    worlds = worlds.reshape(-1, len(atoms))
    logw = np.empty(len(worlds))
    for w, bits in enumerate(worlds):
        counts = np.array([sum(any(bits[index[a]] == pos for a, pos in g.literals) for g in gs)
                           for gs in ground_all], dtype=float)
        logw[w] = _world_log_weight(ruleset, counts, n_ground)
    return atoms, worlds, logw


def world_probability(ruleset: RuleSet, constants: Iterable[str], world: Mapping[Atom, bool],
                      predicates: Iterable[str] | None = None) -> float:
    """P(X = world) = exp(sum_i w_i n_i(world)) / Z with Z by full enumeration.

    Hard rules give probability 0 to every world violating one of their groundings.
    """
    atoms, worlds, logw = world_log_weights(ruleset, constants, predicates)
    unknown = set(world) - set(atoms)
    if unknown:
        raise ValueError(f"world mentions atoms outside the domain: {sorted(unknown)[:3]}")
    log_z = np.logaddexp.reduce(logw)
    target = np.array([bool(world.get(a, False)) for a in atoms])
    row = int(np.flatnonzero((worlds == target).all(axis=1))[0])
    return float(np.exp(logw[row] - log_z))


# -- pseudo-likelihood -------------------------------------------------------

@dataclass
class PseudoLikelihoodStats:
    """Per-atom grounding counts needed to evaluate the pseudo-log-likelihood.

    ``n_obs[l, i]``, ``n_false[l, i]`` and ``n_true[l, i]`` count the true
    groundings of rule ``i`` that contain atom ``l`` when the atom takes its
    observed value, 0 or 1 respectively (all other atoms observed).
    """

    atoms: list[Atom]
    n_obs: np.ndarray
    n_false: np.ndarray
    n_true: np.ndarray
    n_free_atoms: int
    soft: np.ndarray
    hard_weight: float


def pll_statistics(ruleset: RuleSet, evidence: EvidenceDB,
                   hard_weight: float = DEFAULT_HARD_PENALTY) -> PseudoLikelihoodStats:
    consts = sorted(evidence.constants)
    preds = ruleset.predicates | evidence.predicates
    n_atoms = len(preds) * len(consts) ** 2
    rows: dict[Atom, int] = {}
    entries: list[tuple[int, int, int, int, int]] = []
    for i, rule in enumerate(ruleset):
        for g in groundings(rule, consts):
            for atom in g.atoms:
                obs = atom in evidence
                counts = []
                for value in (False, True):
                    total = 0.0
                    for a, pos in g.literals:
                        v = value if a == atom else (a in evidence)
                        total += v if pos else 1 - v
                    counts.append(int(total >= 1))
                row = rows.setdefault(atom, len(rows))
                entries.append((row, i, counts[int(obs)], counts[0], counts[1]))
    shape = (len(rows), len(ruleset))
    n_obs, n_false, n_true = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for row, i, o, f, t in entries:
        n_obs[row, i] += o
        n_false[row, i] += f
        n_true[row, i] += t
    soft = np.array([not r.hard for r in ruleset], dtype=bool)
    return PseudoLikelihoodStats(list(rows), n_obs, n_false, n_true, n_atoms - len(rows), soft,
                                 hard_weight)


def _full_weights(stats: PseudoLikelihoodStats, soft_weights: np.ndarray) -> np.ndarray:
    w = np.full(len(stats.soft), stats.hard_weight)
    w[stats.soft] = soft_weights
    return w


def pll_value_and_grad(stats: PseudoLikelihoodStats, soft_weights: np.ndarray):
    w = _full_weights(stats, np.asarray(soft_weights, dtype=float))
    s_obs, s0, s1 = stats.n_obs @ w, stats.n_false @ w, stats.n_true @ w
    norm = np.logaddexp(s0, s1)
    value = float((s_obs - norm).sum() + stats.n_free_atoms * math.log(0.5))
    p1 = np.exp(s1 - norm)
    expected = (1 - p1)[:, None] * stats.n_false + p1[:, None] * stats.n_true
    grad = (stats.n_obs - expected).sum(axis=0)
    return value, grad[stats.soft]


def pseudo_log_likelihood(ruleset: RuleSet, evidence: EvidenceDB,
                          hard_weight: float = DEFAULT_HARD_PENALTY):
    """Closed-world pseudo-log-likelihood and its gradient w.r.t. the soft weights.

    The domain is every predicate of the rules and the evidence over every
    pair of evidence constants.
    """
    stats = pll_statistics(ruleset, evidence, hard_weight)
    return pll_value_and_grad(stats, ruleset.soft_weights())


@dataclass
class WeightLearningResult:
    ruleset: RuleSet
    trajectory: list[float]
    converged: bool
    steps: int


def learn_weights(ruleset: RuleSet, evidence: EvidenceDB, *, max_steps: int = 5000,
                  tol: float = 1e-4, bound: float = WEIGHT_BOUND, init: float = 0.0,
                  hard_weight: float = DEFAULT_HARD_PENALTY) -> WeightLearningResult:
    """Projected gradient ascent on the pseudo-log-likelihood with backtracking.

    Weights are boxed to ``[-bound, bound]``; iteration stops once the
    projected gradient's max-norm drops below ``tol``.  Every accepted step
    increases the objective, so ``trajectory`` never decreases.
    """
    if len(evidence) == 0:
        raise ValueError("weight learning needs at least one evidence atom")
    n_soft = int(sum(not r.hard for r in ruleset))
    if n_soft == 0:
        return WeightLearningResult(ruleset, [], True, 0)
    stats = pll_statistics(ruleset, evidence, hard_weight)
    w = np.full(n_soft, float(init))
    value, grad = pll_value_and_grad(stats, w)
    trajectory = [value]
    step = 1.0
    converged = False

    def projected(w, g):
        g = g.copy()
        g[(w >= bound) & (g > 0)] = 0.0
        g[(w <= -bound) & (g < 0)] = 0.0
        return g

    steps = 0
    for steps in range(1, max_steps + 1):
        pg = projected(w, grad)
        if np.max(np.abs(pg)) < tol:
            converged = True
            steps -= 1
            break
        while True:
            cand = np.clip(w + step * pg, -bound, bound)
            cand_value, cand_grad = pll_value_and_grad(stats, cand)
            if cand_value >= value + 1e-4 * pg @ (cand - w) or step < 1e-12:
                break
            step *= 0.5
        if cand_value < value:
            converged = True  # no ascent direction left at machine precision
            break
        w, value, grad = cand, cand_value, cand_grad
        trajectory.append(value)
        step = min(step * 2.0, 1e3)
    if not converged:
        log.warning("weight learning stopped after %d steps without convergence", max_steps)
    return WeightLearningResult(ruleset.with_weights(w), trajectory, converged, steps)


# -- rule penalties for a candidate label ------------------------------------

def scoped_groundings(ruleset: RuleSet, subj: str, obj: str) -> list[tuple[Rule, GroundClause]]:
    """Groundings whose substitution maps (a1, a2) to (subj, obj) or (obj, subj)."""
    out = []
    pairs = [(subj, obj)] if subj == obj else [(subj, obj), (obj, subj)]
    for rule in ruleset:
        variables = sorted(rule.variables)
        seen = set()
        for pair in pairs:
            sub = dict(zip(variables, pair))
            g = ground(rule, sub)
            if g.substitution not in seen:
                seen.add(g.substitution)
                out.append((rule, g))
    return out


def rule_penalty_breakdown(ruleset: RuleSet, evidence: EvidenceDB, subj: str, obj: str,
                           candidate: str | None, hard_penalty: float = DEFAULT_HARD_PENALTY,
                           no_relation: str = "NoRelation") -> dict[str, float]:
    """Per-rule sum of ``weight * (1 - truth)`` over the pair-scoped groundings.

    The valuation sets evidence atoms and ``candidate(subj, obj)`` to 1 and
    every other atom to 0.  ``no_relation`` (or ``None``) asserts nothing.
    Negative learned weights are treated as 0 so the penalty stays nonnegative.
    """
    scoped = scoped_groundings(ruleset, subj, obj)
    touched = {atom for _, g in scoped for atom, _ in g.literals}
    valuation = {atom: 1.0 for atom in touched if atom in evidence.atoms}
    if candidate is not None and candidate != no_relation:
        valuation[(predicate_name(candidate), subj, obj)] = 1.0
    out = {r.id: 0.0 for r in ruleset}
    for rule, g in scoped:
        weight = hard_penalty if rule.hard else max(rule.weight, 0.0)
        out[rule.id] += weight * (1.0 - lukasiewicz_truth(g, valuation))
    return out


def rule_penalty(ruleset: RuleSet, evidence: EvidenceDB, subj: str, obj: str,
                 candidate: str | None, hard_penalty: float = DEFAULT_HARD_PENALTY,
                 no_relation: str = "NoRelation") -> float:
    return sum(rule_penalty_breakdown(ruleset, evidence, subj, obj, candidate,
                                      hard_penalty, no_relation).values())


def label_penalties(ruleset: RuleSet, evidence: EvidenceDB, subj: str, obj: str,
                    labels: Sequence[str], hard_penalty: float = DEFAULT_HARD_PENALTY,
                    no_relation: str = "NoRelation") -> np.ndarray:
    """Penalty vector over ``labels`` for one entity pair."""
    if not ruleset.rules:
        return np.zeros(len(labels))
    scoped = scoped_groundings(ruleset, subj, obj)
    # per grounding: weight and (atom, positive, is_evidence) literals
    compiled = []
    for rule, g in scoped:
        weight = hard_penalty if rule.hard else max(rule.weight, 0.0)
        compiled.append((weight, [(atom, pos, atom in evidence.atoms) for atom, pos in g.literals]))
    out = np.zeros(len(labels))
    for k, label in enumerate(labels):
        cand = None if label == no_relation else (predicate_name(label), subj, obj)
        total = 0.0
        for weight, lits in compiled:
            truth = 0.0
            for atom, pos, known in lits:
                v = 1.0 if known or atom == cand else 0.0
                truth += v if pos else 1.0 - v
            total += weight * (1.0 - min(1.0, truth))
        out[k] = total
    return out
