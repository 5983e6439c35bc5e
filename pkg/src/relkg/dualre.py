"""Prediction module p(y|x) and retrieval module q(x, y).

The prediction module is a softmax classifier over the mention encoding.
The retrieval module scores a (mention, relation) pair with sigmoid(z . y)
and is trained with a negative-sampling ranking loss.  Each owns its own
embedding tables.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .features import TABLES, EmbeddingTables, EncodedMentions, FeatureDims, Vocabulary, encode

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "relkg-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class SGDOptions:
    lr: float = 0.5
    epochs: int = 100
    batch_size: int = 32
    m_neg: int = 5


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


class _Model:
    kind = ""
    head_names: tuple[str, ...] = ()

    def __init__(self, tables: EmbeddingTables, labels: Sequence[str]):
        self.tables = tables
        self.labels = tuple(labels)

    def params(self) -> dict[str, np.ndarray]:
        out = self.tables.arrays()
        out.update({name: getattr(self, name) for name in self.head_names})
        return out

    def copy(self):
        clone = object.__new__(type(self))
        clone.tables = self.tables.copy()
        clone.labels = self.labels
        for name in self.head_names:
            setattr(clone, name, getattr(self, name).copy())
        return clone

    def _apply(self, grads: dict[str, np.ndarray], lr: float) -> None:
        params = self.params()
        for name, g in grads.items():
            arr = params[name]
            arr -= lr * g  # in place: tables are shared by reference

    def save(self, path: str | Path) -> None:
        body = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "labels": list(self.labels),
            "tables": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                       for name, arr in self.params().items()},
        }
        Path(path).write_text(json.dumps(body), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary, labels: Sequence[str],
             dims: FeatureDims = FeatureDims()):
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        if body.get("format") != CHECKPOINT_FORMAT or body.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
        if body.get("kind") != cls.kind:
            raise ValueError(f"{path}: holds a {body.get('kind')} model, expected {cls.kind}")
        if tuple(body["labels"]) != tuple(labels):
            raise ValueError(f"{path}: label set differs from the inventory")
        template = cls.initialize(vocab, labels, dims)
        arrays = {}
        for name, ref in template.params().items():
            entry = body["tables"].get(name)
            if entry is None or tuple(entry["shape"]) != ref.shape:
                got = None if entry is None else tuple(entry["shape"])
                raise ValueError(f"{path}: table {name} has shape {got}, expected {ref.shape}")
            arrays[name] = np.asarray(entry["data"], dtype=float).reshape(ref.shape)
        model = cls(EmbeddingTables(*(arrays[n] for n in TABLES)), labels,
                    *(arrays[n] for n in cls.head_names))
        return model


class PredictionModel(_Model):
    kind = "prediction"
    head_names = ("weight", "bias")

    def __init__(self, tables, labels, weight=None, bias=None):
        super().__init__(tables, labels)
        n, d = len(self.labels), tables.d_z
        self.weight = np.zeros((n, d)) if weight is None else weight
        self.bias = np.zeros(n) if bias is None else bias

    @classmethod
    def initialize(cls, vocab, labels, dims=FeatureDims(), rng=None, scale=1.0):
        return cls(EmbeddingTables.initialize(vocab, dims, rng, scale), labels)

    def logits(self, z: np.ndarray) -> np.ndarray:
        return z @ self.weight.T + self.bias

    def proba_from_z(self, z: np.ndarray) -> np.ndarray:
        return softmax(self.logits(z), axis=-1)

    def proba(self, enc: EncodedMentions, rows=None) -> np.ndarray:
        return self.proba_from_z(enc.forward(self.tables, rows))

    def predict_proba(self, mention, vocab: Vocabulary) -> np.ndarray:
        return self.proba_from_z(encode(mention, vocab, self.tables).z)

    def loss_and_grad(self, enc: EncodedMentions, rows: np.ndarray, targets: np.ndarray,
                      with_grad: bool = True):
        """Mean cross-entropy over ``rows`` and its gradient for every parameter."""
        z = enc.forward(self.tables, rows)
        logp = log_softmax(self.logits(z), axis=1)
        n = len(rows)
        loss = -logp[np.arange(n), targets].mean()
        if not with_grad:
            return loss, None
        d_logits = np.exp(logp)
        d_logits[np.arange(n), targets] -= 1.0
        d_logits /= n
        grads = enc.backward(self.tables, d_logits @ self.weight, rows)
        grads["weight"] = d_logits.T @ z
        grads["bias"] = d_logits.sum(axis=0)
        return loss, grads


class RetrievalModel(_Model):
    kind = "retrieval"
    head_names = ("relations",)

    def __init__(self, tables, labels, relations=None):
        super().__init__(tables, labels)
        self.relations = np.zeros((len(self.labels), tables.d_z)) if relations is None else relations

    @classmethod
    def initialize(cls, vocab, labels, dims=FeatureDims(), rng=None, scale=1.0):
        tables = EmbeddingTables.initialize(vocab, dims, rng, scale)
        rel = None if rng is None else rng.normal(0.0, scale, size=(len(labels), tables.d_z))
        return cls(tables, labels, rel)

    def scores_from_z(self, z: np.ndarray) -> np.ndarray:
        return expit(z @ self.relations.T)

    def score_retrieval(self, mention, label: str, vocab: Vocabulary) -> float:
        z = encode(mention, vocab, self.tables).z
        return float(expit(z @ self.relations[self.labels.index(label)]))

    def conditional_from_z(self, z: np.ndarray) -> np.ndarray:
        s = self.scores_from_z(z)
        return s / s.sum(axis=-1, keepdims=True)

    def conditional(self, enc: EncodedMentions, rows=None) -> np.ndarray:
        return self.conditional_from_z(enc.forward(self.tables, rows))

    def retrieval_conditional(self, mention, vocab: Vocabulary) -> np.ndarray:
        return self.conditional_from_z(encode(mention, vocab, self.tables).z)

    def loss_and_grad(self, enc: EncodedMentions, rows: np.ndarray, labels: np.ndarray,
                      is_positive: np.ndarray, weights: np.ndarray, n_positive: int,
                      with_grad: bool = True):
        """Weighted ranking loss over (row, label) pairs, averaged per positive.

        Positive pairs contribute ``-log sigmoid(z.y)``; negative pairs
        ``-log(1 - sigmoid(z.y))``.  ``rows`` index into ``enc`` and may repeat.
        """
        uniq, inverse = np.unique(rows, return_inverse=True)
        z_u = enc.forward(self.tables, uniq)
        z = z_u[inverse]
        s = np.einsum("ij,ij->i", z, self.relations[labels])
        sign = np.where(is_positive, 1.0, -1.0)
        loss = -(weights * _log_sigmoid(sign * s)).sum() / n_positive
        if not with_grad:
            return loss, None
        # d/ds of -log sigmoid(sign*s) = -sign * sigmoid(-sign*s)
        g = -(weights * sign * expit(-sign * s)) / n_positive
        # collect pair gradients into a (unique rows x labels) matrix
        n_labels = len(self.relations)
        coef = np.bincount(inverse * n_labels + labels, g, minlength=len(uniq) * n_labels)
        coef = coef.reshape(len(uniq), n_labels)
        grads = enc.backward(self.tables, coef @ self.relations, uniq)
        grads["relations"] = coef.T @ z_u
        return loss, grads


def _check_finite(loss: float, what: str, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"{what} loss became non-finite ({loss}) at epoch {epoch}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def fit_prediction(model: PredictionModel, enc: EncodedMentions, rows: np.ndarray,
                   targets: np.ndarray, opts: SGDOptions, rng: np.random.Generator) -> list[float]:
    """Mini-batch SGD on the cross-entropy; returns the full-set loss after each epoch."""
    rows, targets = np.asarray(rows), np.asarray(targets)
    if len(rows) == 0:
        raise TrainingError("prediction module needs at least one labeled mention")
    trace = []
    for epoch in range(opts.epochs):
        for batch in _batches(len(rows), opts.batch_size, rng):
            loss, grads = model.loss_and_grad(enc, rows[batch], targets[batch])
            _check_finite(loss, "prediction", epoch)
            model._apply(grads, opts.lr)
        loss, _ = model.loss_and_grad(enc, rows, targets, with_grad=False)
        _check_finite(loss, "prediction", epoch)
        trace.append(float(loss))
    return trace


def sample_negatives(targets: np.ndarray, n_labels: int, m_neg: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``m_neg`` labels per target drawn uniformly from the other labels."""
    draws = rng.integers(0, n_labels - 1, size=(len(targets), m_neg))
    return draws + (draws >= targets[:, None])


def ranking_pairs(rows, targets, negatives):
    n, m = negatives.shape
    pair_rows = np.concatenate([rows, np.repeat(rows, m)])
    pair_labels = np.concatenate([targets, negatives.ravel()])
    positive = np.concatenate([np.ones(n, bool), np.zeros(n * m, bool)])
    return pair_rows, pair_labels, positive, np.ones(len(pair_rows))


def expected_ranking_pairs(rows, targets, n_labels: int, m_neg: int):
    """All negatives, each weighted by its sampling expectation ``m_neg / (L-1)``."""
    n = len(rows)
    all_labels = np.tile(np.arange(n_labels), n)
    all_rows = np.repeat(rows, n_labels)
    keep = all_labels != np.repeat(targets, n_labels)
    neg_rows, neg_labels = all_rows[keep], all_labels[keep]
    pair_rows = np.concatenate([rows, neg_rows])
    pair_labels = np.concatenate([targets, neg_labels])
    positive = np.concatenate([np.ones(n, bool), np.zeros(len(neg_rows), bool)])
    weights = np.concatenate([np.ones(n), np.full(len(neg_rows), m_neg / (n_labels - 1))])
    return pair_rows, pair_labels, positive, weights


def fit_retrieval(model: RetrievalModel, enc: EncodedMentions, rows: np.ndarray,
                  targets: np.ndarray, opts: SGDOptions, rng: np.random.Generator) -> list[float]:
    """Mini-batch SGD on the negative-sampling ranking loss.

    The returned trace is the expected loss over all negatives after each epoch.
    """
    rows, targets = np.asarray(rows), np.asarray(targets)
    if len(rows) == 0:
        raise TrainingError("retrieval module needs at least one labeled mention")
    if opts.m_neg < 1:
        raise ValueError("m_neg must be >= 1")
    n_labels = len(model.labels)
    trace = []
    full = expected_ranking_pairs(rows, targets, n_labels, opts.m_neg)
    for epoch in range(opts.epochs):
        for batch in _batches(len(rows), opts.batch_size, rng):
            negs = sample_negatives(targets[batch], n_labels, opts.m_neg, rng)
            pairs = ranking_pairs(rows[batch], targets[batch], negs)
            loss, grads = model.loss_and_grad(enc, *pairs, n_positive=len(batch))
            _check_finite(loss, "retrieval", epoch)
            model._apply(grads, opts.lr)
        loss, _ = model.loss_and_grad(enc, *full, n_positive=len(rows), with_grad=False)
        _check_finite(loss, "retrieval", epoch)
        trace.append(float(loss))
    return trace


def _pairs_to_arrays(pairs, label_index):
    mentions = [m for m, _ in pairs]
    targets = np.array([label_index[lbl] for _, lbl in pairs], dtype=np.int64)
    return mentions, targets


def train_prediction(model: PredictionModel, labeled, promoted=(), *, vocab: Vocabulary,
                     opts: SGDOptions = SGDOptions(), rng: np.random.Generator | None = None):
    """Fit on ``labeled`` plus ``promoted`` (mention, label) pairs; returns the loss trace."""
    rng = np.random.default_rng(0) if rng is None else rng
    pairs = [*labeled, *promoted]
    mentions, targets = _pairs_to_arrays(pairs, {l: i for i, l in enumerate(model.labels)})
    enc = EncodedMentions(mentions, vocab)
    return fit_prediction(model, enc, np.arange(len(mentions)), targets, opts, rng)


def train_retrieval(model: RetrievalModel, labeled, promoted=(), *, vocab: Vocabulary,
                    opts: SGDOptions = SGDOptions(), rng: np.random.Generator | None = None):
    rng = np.random.default_rng(0) if rng is None else rng
    pairs = [*labeled, *promoted]
    mentions, targets = _pairs_to_arrays(pairs, {l: i for i, l in enumerate(model.labels)})
    enc = EncodedMentions(mentions, vocab)
    return fit_retrieval(model, enc, np.arange(len(mentions)), targets, opts, rng)
