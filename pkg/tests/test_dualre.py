import numpy as np
import pytest
from scipy.special import expit

from relkg.dualre import (PredictionModel, RetrievalModel, SGDOptions, TrainingError, expected_ranking_pairs,
                          fit_prediction, ranking_pairs, sample_negatives, train_prediction, train_retrieval)
from relkg.features import EncodedMentions, FeatureDims, build_vocab
from relkg.mentions import generate_candidates

from conftest import POSITIONING, make_sentence

LABELS = ("Causes", "PartOf", "HasA", "NoRelation")
DIMS = FeatureDims(4, 3, 2)


@pytest.fixture(scope="module")
def setup():
    sent = make_sentence(POSITIONING)
    cands = generate_candidates([sent])[:8]
    vocab = build_vocab([sent])
    return cands, vocab, EncodedMentions(cands, vocab)


def numeric_grad(f, arr, idx, eps=1e-6):
    old = arr[idx]
    arr[idx] = old + eps
    hi = f()
    arr[idx] = old - eps
    lo = f()
    arr[idx] = old
    return (hi - lo) / (2 * eps)


def check_gradients(model, loss_fn, rng, per_table=12):
    _, grads = loss_fn(True)
    params = model.params()
    worst = 0.0
    for name, arr in params.items():
        g = grads[name]
        # probe the coordinates with the largest analytic gradient plus random ones
        flat = np.argsort(-np.abs(g).ravel())[:per_table // 2]
        flat = np.concatenate([flat, rng.integers(0, arr.size, per_table // 2)])
        for f in flat:
            idx = np.unravel_index(f, arr.shape)
            num = numeric_grad(lambda: loss_fn(False)[0], arr, idx)
            worst = max(worst, abs(num - g[idx]) / max(1.0, abs(num), abs(g[idx])))
    return worst


def test_prediction_gradient(setup):
    cands, vocab, enc = setup
    rng = np.random.default_rng(3)
    model = PredictionModel.initialize(vocab, LABELS, DIMS, rng)
    model.weight[:] = rng.normal(size=model.weight.shape)
    rows = np.array([0, 1, 2, 2, 5])
    targets = np.array([0, 3, 1, 1, 2])
    err = check_gradients(model, lambda g: model.loss_and_grad(enc, rows, targets, with_grad=g), rng)
    assert err < 1e-6


def test_retrieval_gradient(setup):
    cands, vocab, enc = setup
    rng = np.random.default_rng(4)
    model = RetrievalModel.initialize(vocab, LABELS, DIMS, rng)
    rows = np.array([0, 3, 4])
    targets = np.array([1, 0, 3])
    negs = sample_negatives(targets, len(LABELS), 3, rng)
    pairs = ranking_pairs(rows, targets, negs)
    err = check_gradients(model, lambda g: model.loss_and_grad(enc, *pairs, n_positive=3, with_grad=g), rng)
    assert err < 1e-6
    full = expected_ranking_pairs(rows, targets, len(LABELS), 2)
    err = check_gradients(model, lambda g: model.loss_and_grad(enc, *full, n_positive=3, with_grad=g), rng)
    assert err < 1e-6


def test_retrieval_loss_by_hand(setup):
    cands, vocab, enc = setup
    rng = np.random.default_rng(5)
    model = RetrievalModel.initialize(vocab, LABELS, DIMS, rng)
    z = enc.forward(model.tables, np.array([2]))[0]
    pairs = ranking_pairs(np.array([2]), np.array([1]), np.array([[0, 3]]))
    loss, _ = model.loss_and_grad(enc, *pairs, n_positive=1, with_grad=False)
    y = model.relations
    hand = -np.log(expit(z @ y[1])) - np.log(1 - expit(z @ y[0])) - np.log(1 - expit(z @ y[3]))
    assert loss == pytest.approx(hand, rel=1e-10)


def test_negatives_never_hit_target():
    rng = np.random.default_rng(0)
    targets = rng.integers(0, 5, 400)
    negs = sample_negatives(targets, 5, 7, rng)
    assert (negs != targets[:, None]).all()
    assert negs.min() >= 0 and negs.max() <= 4
    # uniform over the 4 other labels
    counts = np.bincount(negs[targets == 0].ravel(), minlength=5)
    assert counts[0] == 0 and counts[1:].min() > 0.15 * counts.sum()


def test_expected_pairs_weights():
    rows, labels, pos, w = expected_ranking_pairs(np.array([0, 1]), np.array([2, 0]), 4, 6)
    assert pos.sum() == 2 and len(rows) == 2 + 2 * 3
    assert np.allclose(w[~pos], 2.0)


def test_distributions(setup):
    cands, vocab, enc = setup
    rng = np.random.default_rng(6)
    p = PredictionModel.initialize(vocab, LABELS, DIMS, rng)
    q = RetrievalModel.initialize(vocab, LABELS, DIMS, rng)
    np.testing.assert_allclose(p.proba(enc).sum(axis=1), 1.0)
    cond = q.conditional(enc)
    np.testing.assert_allclose(cond.sum(axis=1), 1.0)
    m = cands[1]
    scores = np.array([q.score_retrieval(m, l, vocab) for l in LABELS])
    np.testing.assert_allclose(scores / scores.sum(), q.retrieval_conditional(m, vocab))
    np.testing.assert_allclose(p.predict_proba(m, vocab), p.proba(enc, np.array([1]))[0])


def test_training_reduces_loss(setup):
    cands, vocab, _ = setup
    rng = np.random.default_rng(7)
    pairs = [(m, LABELS[i % 4]) for i, m in enumerate(cands)]
    p = PredictionModel.initialize(vocab, LABELS, DIMS, rng)
    trace = train_prediction(p, pairs, vocab=vocab, opts=SGDOptions(lr=0.5, epochs=40), rng=rng)
    assert trace[-1] < trace[0]
    q = RetrievalModel.initialize(vocab, LABELS, DIMS, rng)
    trace = train_retrieval(q, pairs[:4], pairs[4:], vocab=vocab, opts=SGDOptions(lr=0.5, epochs=40), rng=rng)
    assert trace[-1] < trace[0]


def test_empty_training_set(setup):
    _, vocab, enc = setup
    p = PredictionModel.initialize(vocab, LABELS, DIMS)
    with pytest.raises(TrainingError):
        fit_prediction(p, enc, np.array([], int), np.array([], int), SGDOptions(), np.random.default_rng(0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(setup):
    cands, vocab, _ = setup
    rng = np.random.default_rng(0)
    p = PredictionModel.initialize(vocab, LABELS, DIMS, rng, scale=1e200)
    with pytest.raises(TrainingError, match="non-finite"):
        train_prediction(p, [(cands[0], "Causes")], vocab=vocab, opts=SGDOptions(lr=1e200, epochs=3), rng=rng)


def test_checkpoint_roundtrip(tmp_path, setup):
    cands, vocab, enc = setup
    rng = np.random.default_rng(8)
    for cls in (PredictionModel, RetrievalModel):
        m = cls.initialize(vocab, LABELS, DIMS, rng)
        m.save(tmp_path / f"{cls.kind}.json")
        back = cls.load(tmp_path / f"{cls.kind}.json", vocab, LABELS, DIMS)
        for name, arr in m.params().items():
            np.testing.assert_array_equal(arr, back.params()[name])
    with pytest.raises(ValueError, match="label set"):
        PredictionModel.load(tmp_path / "prediction.json", vocab, LABELS[::-1], DIMS)
    with pytest.raises(ValueError, match="expected prediction"):
        PredictionModel.load(tmp_path / "retrieval.json", vocab, LABELS, DIMS)
    with pytest.raises(ValueError, match="shape"):
        PredictionModel.load(tmp_path / "prediction.json", vocab, LABELS, FeatureDims(5, 3, 2))


def test_copy_is_independent(setup):
    _, vocab, _ = setup
    m = PredictionModel.initialize(vocab, LABELS, DIMS, np.random.default_rng(0))
    c = m.copy()
    c.weight += 1
    c.tables.word += 1
    assert not np.allclose(c.weight, m.weight) and not np.allclose(c.tables.word, m.tables.word)


def test_zero_initialization_is_uniform(setup):
    cands, vocab, enc = setup
    p = PredictionModel.initialize(vocab, LABELS, DIMS, np.random.default_rng(0))
    p.weight[:] = 0
    p.bias[:] = 0
    np.testing.assert_allclose(p.proba(enc), 1 / len(LABELS), atol=1e-15)
    for name in ("word", "pos", "subj_offset", "obj_offset"):
        getattr(p.tables, name)[:] = 0
    assert not enc.forward(p.tables, np.arange(len(cands))).any()


@pytest.mark.parametrize("lr", [0.1, 0.5])
def test_full_batch_trace_non_increasing(setup, lr):
    cands, vocab, _ = setup
    rng = np.random.default_rng(0)
    p = PredictionModel.initialize(vocab, LABELS, DIMS, rng)
    pairs = [(m, LABELS[i % 4]) for i, m in enumerate(cands)]
    trace = train_prediction(p, pairs, vocab=vocab, opts=SGDOptions(lr=lr, epochs=30, batch_size=32), rng=rng)
    assert max(np.diff(trace)) <= 1e-6


def test_single_example_memorized(setup):
    cands, vocab, _ = setup
    rng = np.random.default_rng(0)
    p = PredictionModel.initialize(vocab, LABELS, FeatureDims(), rng)
    train_prediction(p, [(cands[0], "HasA")], vocab=vocab, opts=SGDOptions(), rng=rng)
    assert p.predict_proba(cands[0], vocab)[LABELS.index("HasA")] >= 0.99
