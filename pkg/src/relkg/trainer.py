"""Rule-regularized dual training loop with intersection-based promotion."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import NO_RELATION, MentionStore, RelationInventory
from .dualre import PredictionModel, RetrievalModel, SGDOptions, fit_prediction, fit_retrieval
from .features import EncodedMentions, FeatureDims, Vocabulary, build_vocab
from .ruleset import DEFAULT_HARD_PENALTY, EvidenceDB, RuleSet, label_penalties, parse_evidence_text, \
    parse_rules_text
from .teacher import project

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 7
    P: float = 4
    C: float = 1.0
    k_fraction: float = 0.1
    max_iterations: int = 10
    m_neg: int = 5
    lr: float = 0.5
    epochs: int = 100
    batch_size: int = 32
    hard_penalty: float = DEFAULT_HARD_PENALTY
    threshold: float = 0.5
    min_count: int = 1
    word_dim: int = 50
    pos_dim: int = 10
    offset_dim: int = 10
    init_scale: float = 1.0
    sample_promoted: bool = False

    def __post_init__(self):
        checks = [
            (self.P >= 1, "P must be >= 1"),
            (self.C >= 0, "C must be >= 0"),
            (0 < self.k_fraction <= 1, "k_fraction must lie in (0, 1]"),
            (self.max_iterations >= 0, "max_iterations must be >= 0"),
            (self.m_neg >= 1, "m_neg must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.hard_penalty >= 0, "hard_penalty must be >= 0"),
            (0 <= self.threshold <= 1, "threshold must lie in [0, 1]"),
            (self.min_count >= 1, "min_count must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def dims(self) -> FeatureDims:
        return FeatureDims(self.word_dim, self.pos_dim, self.offset_dim)

    @property
    def sgd(self) -> SGDOptions:
        return SGDOptions(self.lr, self.epochs, self.batch_size, self.m_neg)

    @classmethod
    def from_mapping(cls, values: dict) -> TrainConfig:
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            default = getattr(cls(), key)
            if isinstance(default, bool):
                kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            elif key == "P" and str(raw).lower() in ("inf", "infinity"):
                kwargs[key] = math.inf
            else:
                kwargs[key] = type(default)(raw)
        return cls(**kwargs)


class RelationLabeler:
    """Student, retrieval and teacher distributions for arbitrary mentions."""

    def __init__(self, prediction: PredictionModel, retrieval: RetrievalModel, vocab: Vocabulary,
                 inventory: RelationInventory, ruleset: RuleSet, evidence: EvidenceDB,
                 C: float = 1.0, hard_penalty: float = DEFAULT_HARD_PENALTY):
        self.prediction = prediction
        self.retrieval = retrieval
        self.vocab = vocab
        self.inventory = inventory
        self.ruleset = ruleset
        self.evidence = evidence
        self.C = C
        self.hard_penalty = hard_penalty
        self._penalty_cache: dict[tuple[str, str], np.ndarray] = {}

    def penalties(self, mentions: Sequence) -> np.ndarray:
        out = np.zeros((len(mentions), len(self.inventory)))
        if not self.ruleset.rules:
            return out
        for i, m in enumerate(mentions):
            pair = m.entity_pair
            vec = self._penalty_cache.get(pair)
            if vec is None:
                vec = label_penalties(self.ruleset, self.evidence, *pair, self.inventory.labels,
                                      self.hard_penalty)
                self._penalty_cache[pair] = vec
            out[i] = vec
        return out

    def student(self, mentions: Sequence, enc: EncodedMentions | None = None, rows=None) -> np.ndarray:
        enc = enc or EncodedMentions(mentions, self.vocab)
        return self.prediction.proba(enc, rows)

    def retrieval_conditional(self, mentions: Sequence, enc: EncodedMentions | None = None,
                              rows=None) -> np.ndarray:
        enc = enc or EncodedMentions(mentions, self.vocab)
        return self.retrieval.conditional(enc, rows)

    def teacher(self, mentions: Sequence, enc: EncodedMentions | None = None, rows=None) -> np.ndarray:
        if len(mentions) == 0:
            return np.zeros((0, len(self.inventory)))
        p = self.student(mentions, enc, rows)
        return project(p, self.penalties(mentions), self.C)

    def classify(self, mentions: Sequence) -> list[tuple[str, float]]:
        """Winning teacher label and its probability for each mention."""
        t = self.teacher(list(mentions))
        best = t.argmax(axis=1)
        return [(self.inventory.labels[k], float(t[i, k])) for i, k in enumerate(best)]


@dataclass
class Promotion:
    iteration: int
    mention: object
    label: str
    t_score: float
    q_score: float

    def to_record(self) -> dict:
        return {"iter": self.iteration, "mention": self.mention.to_record(), "label": self.label,
                "t_score": self.t_score, "q_score": self.q_score}


@dataclass
class TrainResult:
    prediction: PredictionModel
    retrieval: RetrievalModel
    vocab: Vocabulary
    ruleset: RuleSet
    evidence: EvidenceDB
    config: TrainConfig
    promotions: list[Promotion] = field(default_factory=list)
    iterations: list[dict] = field(default_factory=list)
    store: MentionStore | None = None
    traces: list[dict] = field(default_factory=list)  # per-fit epoch losses

    def labeler(self, inventory: RelationInventory) -> RelationLabeler:
        return RelationLabeler(self.prediction, self.retrieval, self.vocab, inventory, self.ruleset,
                               self.evidence, self.config.C, self.config.hard_penalty)

    def promotion_log(self) -> str:
        return "".join(json.dumps(p.to_record(), sort_keys=True) + "\n" for p in self.promotions)


class DualTrainer:
    """Pretrain both modules on L, then alternate promotion and retraining.

    ``scorer`` (optional) maps a list of predicted labels for ``dev`` to a
    dict of metrics that is attached to every iteration record.
    """

    def __init__(self, store: MentionStore, ruleset: RuleSet, config: TrainConfig,
                 dev: Sequence[tuple[object, str]] = (),
                 scorer: Callable[[list, list], dict] | None = None):
        if not store.labeled:
            raise ValueError("training needs at least one labeled mention")
        self.store = store
        self.inventory = store.inventory
        self.ruleset = ruleset
        self.config = config
        self.dev = list(dev)
        self.scorer = scorer
        self.label_index = {lbl: i for i, lbl in enumerate(self.inventory.labels)}
        self.no_rel = self.label_index.get(NO_RELATION)

        mentions = [m for m, _ in store.labeled] + list(store.unlabeled) + [m for m, _ in store.promoted]
        self.vocab = build_vocab((m.sentence for m in mentions), config.min_count)
        self.mentions = mentions
        self.row_of = {m.key: i for i, m in enumerate(mentions)}
        self.enc = EncodedMentions(mentions, self.vocab)
        self.initial_unlabeled = len(store.unlabeled) + len(store.promoted)
        self.k = max(1, math.ceil(config.k_fraction * self.initial_unlabeled))

        seeds = np.random.SeedSequence(config.seed).spawn(5)
        init_p, init_r, self.rng_p, self.rng_r, self.rng_sample = (np.random.default_rng(s) for s in seeds)
        labels = self.inventory.labels
        self.prediction = PredictionModel.initialize(self.vocab, labels, config.dims, init_p,
                                                     config.init_scale)
        self.retrieval = RetrievalModel.initialize(self.vocab, labels, config.dims, init_r,
                                                   config.init_scale)
        self.teacher_u: np.ndarray | None = None
        self.labeler: RelationLabeler | None = None
        self.iteration = 0
        self.promotions: list[Promotion] = []
        self.iterations: list[dict] = []
        self.traces: list[dict] = []

    # -- helpers ------------------------------------------------------------
    def _rows(self, mentions) -> np.ndarray:
        return np.array([self.row_of[m.key] for m in mentions], dtype=np.int64)

    def _targets(self, labels) -> np.ndarray:
        return np.array([self.label_index[l] for l in labels], dtype=np.int64)

    def evidence(self) -> EvidenceDB:
        return EvidenceDB.from_labeled(self.store.training_pairs())

    def _training_arrays(self, proposal: np.ndarray | None = None):
        pairs = self.store.training_pairs()
        rows = self._rows([m for m, _ in pairs])
        targets = self._targets([l for _, l in pairs])
        if proposal is not None and self.store.promoted:
            # sampled variant: promoted targets drawn from the other module's conditional
            n_l = len(self.store.labeled)
            dist = proposal[rows[n_l:]]
            cum = dist.cumsum(axis=1)
            u = self.rng_sample.random(len(dist))[:, None] * cum[:, -1:]
            targets = targets.copy()
            targets[n_l:] = (cum < u).sum(axis=1)
        return rows, targets

    def _train_prediction(self) -> list[float]:
        proposal = None
        if self.config.sample_promoted:
            proposal = self.retrieval.conditional(self.enc)
        rows, targets = self._training_arrays(proposal)
        return fit_prediction(self.prediction, self.enc, rows, targets, self.config.sgd, self.rng_p)

    def _train_retrieval(self) -> list[float]:
        proposal = None
        if self.config.sample_promoted:
            proposal = self.prediction.proba(self.enc)
        rows, targets = self._training_arrays(proposal)
        return fit_retrieval(self.retrieval, self.enc, rows, targets, self.config.sgd, self.rng_r)

    # -- algorithm steps ----------------------------------------------------
    def pretrain(self) -> tuple[list[float], list[float]]:
        if self.store.promoted:
            raise ValueError("pretraining expects an empty promoted set")
        trace_p = self._train_prediction()
        trace_r = self._train_retrieval()
        self.traces.append({"iteration": 0, "prediction": trace_p, "retrieval": trace_r})
        self.compute_teacher()
        return trace_p, trace_r

    def compute_teacher(self) -> np.ndarray:
        self.labeler = RelationLabeler(self.prediction, self.retrieval, self.vocab, self.inventory,
                                       self.ruleset, self.evidence(), self.config.C,
                                       self.config.hard_penalty)
        u = list(self.store.unlabeled)
        self.teacher_u = self.labeler.teacher(u, self.enc, self._rows(u)) if u else \
            np.zeros((0, len(self.inventory)))
        return self.teacher_u

    def select_promotions(self) -> list[Promotion]:
        if self.teacher_u is None:
            raise RuntimeError("compute_teacher must run before selection")
        u = list(self.store.unlabeled)
        if not u:
            return []
        t = self.teacher_u
        q = self.retrieval.conditional(self.enc, self._rows(u))
        t_best, q_best = t.argmax(axis=1), q.argmax(axis=1)
        agree = np.flatnonzero((t_best == q_best) & (t_best != self.no_rel))
        if not len(agree):
            return []
        labels = t_best[agree]
        t_sc, q_sc = t[agree, labels], q[agree, labels]
        score = np.sqrt(t_sc * q_sc)
        order = np.argsort(-score, kind="stable")[: self.k]
        return [Promotion(self.iteration, u[agree[i]], self.inventory.labels[labels[i]],
                          float(t_sc[i]), float(q_sc[i])) for i in order]

    def _dev_metrics(self) -> dict:
        if not self.dev or self.scorer is None:
            return {}
        labeler = RelationLabeler(self.prediction, self.retrieval, self.vocab, self.inventory,
                                  self.ruleset, self.evidence(), self.config.C,
                                  self.config.hard_penalty)
        preds = [lbl for lbl, _ in labeler.classify([m for m, _ in self.dev])]
        return self.scorer(preds, [g for _, g in self.dev])

    def run(self) -> TrainResult:
        self.pretrain()
        while self.store.unlabeled and self.iteration < self.config.max_iterations:
            self.iteration += 1
            chosen = self.select_promotions()
            record = {"iteration": self.iteration, "promoted": len(chosen)}
            if chosen:
                self.store.promote([(p.mention, p.label) for p in chosen])
                self.promotions.extend(chosen)
                loss_p = self._train_prediction()
                loss_r = self._train_retrieval()
                self.traces.append({"iteration": self.iteration, "prediction": loss_p,
                                    "retrieval": loss_r})
                self.compute_teacher()
                record.update(prediction_loss=loss_p[-1] if loss_p else None,
                              retrieval_loss=loss_r[-1] if loss_r else None)
            record.update(unlabeled=len(self.store.unlabeled), promoted_total=len(self.store.promoted))
            record.update(self._dev_metrics())
            self.iterations.append(record)
            log.info("iteration %d: promoted %d, |U| = %d", self.iteration, len(chosen),
                     len(self.store.unlabeled))
            if not chosen:
                break
        return TrainResult(self.prediction, self.retrieval, self.vocab, self.ruleset, self.evidence(),
                           self.config, self.promotions, self.iterations, self.store, self.traces)


def train(store: MentionStore, ruleset: RuleSet, config: TrainConfig, dev=(), scorer=None) -> TrainResult:
    return DualTrainer(store, ruleset, config, dev, scorer).run()


# -- model directory ----------------------------------------------------------

def save_run(result: TrainResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "prediction": out / "prediction.json",
        "retrieval": out / "retrieval.json",
        "vocab": out / "vocab.tsv",
        "rules": out / "rules.txt",
        "evidence": out / "evidence.txt",
        "config": out / "config.json",
        "promotions": out / "promotions.jsonl",
        "log": out / "train_log.jsonl",
        "losses": out / "losses.jsonl",
    }
    result.prediction.save(paths["prediction"])
    result.retrieval.save(paths["retrieval"])
    result.vocab.save(paths["vocab"])
    paths["rules"].write_text(result.ruleset.dumps(), encoding="utf-8")
    paths["evidence"].write_text(result.evidence.dumps(), encoding="utf-8")
    cfg = asdict(result.config)
    if math.isinf(cfg["P"]):
        cfg["P"] = "inf"
    paths["config"].write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["promotions"].write_text(result.promotion_log(), encoding="utf-8")
    paths["log"].write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in result.iterations),
                            encoding="utf-8")
    paths["losses"].write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in result.traces),
                               encoding="utf-8")
    return paths


def load_labeler(model_dir: str | Path, inventory: RelationInventory) -> tuple[RelationLabeler, TrainConfig]:
    d = Path(model_dir)
    config = TrainConfig.from_mapping(json.loads((d / "config.json").read_text(encoding="utf-8")))
    vocab = Vocabulary.load(d / "vocab.tsv")
    prediction = PredictionModel.load(d / "prediction.json", vocab, inventory.labels, config.dims)
    retrieval = RetrievalModel.load(d / "retrieval.json", vocab, inventory.labels, config.dims)
    ruleset = parse_rules_text((d / "rules.txt").read_text(encoding="utf-8"))
    evidence = parse_evidence_text((d / "evidence.txt").read_text(encoding="utf-8"))
    labeler = RelationLabeler(prediction, retrieval, vocab, inventory, ruleset, evidence,
                              config.C, config.hard_penalty)
    return labeler, config
