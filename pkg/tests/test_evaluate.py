import json
import math

import numpy as np
import pytest

from puembed.data import SentencePair
from puembed.errors import DataError, ShapeError, UsageError
from puembed.evaluate import (ScoredPairSet, choose_threshold, classification_metrics, cosine_similarity,
                              load_eval_jsonl, logreg_probe, pairwise_cosine, similarity_threshold_eval,
                              spearman)


def brute_ranks(xs):
    """Average 1-based ranks, ties resolved by counting."""
    out = []
    for x in xs:
        below = sum(1 for y in xs if y < x)
        equal = sum(1 for y in xs if y == x)
        out.append(below + (equal + 1) / 2)
    return out


def brute_spearman(xs, ys):
    rx, ry = brute_ranks(list(xs)), brute_ranks(list(ys))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return cov / math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))


class TableModel:
    """Stand-in model with a fixed sentence -> embedding table."""

    def __init__(self, table):
        self.table = table

    def embed_texts(self, texts):
        return np.array([self.table[t] for t in texts], dtype=float)


# -- cosine --------------------------------------------------------------------


def test_cosine_cases(rng):
    u = rng.normal(size=5)
    assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0
    assert cosine_similarity(u, -u) == pytest.approx(-1.0, abs=1e-15)
    v = rng.normal(size=5)
    assert cosine_similarity(3.5 * u, 0.2 * v) == pytest.approx(cosine_similarity(u, v), abs=1e-12)
    with pytest.raises(ShapeError):
        cosine_similarity(np.ones(2), np.ones(3))


def test_cosine_degenerate(caplog):
    with caplog.at_level("WARNING"):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0
        out = pairwise_cosine(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 0.0], [2.0, 2.0]]))
    np.testing.assert_allclose(out, [0.0, 1.0])
    assert "degenerate" in caplog.text


# -- spearman ------------------------------------------------------------------------


def test_spearman_monotone_cases():
    xs = np.arange(10.0)
    assert spearman(xs, xs ** 3) == 1.0
    assert spearman(xs, -xs) == -1.0


def test_spearman_tied_example():
    xs, ys = [1, 2, 2, 3], [1, 2, 3, 4]
    expected = brute_spearman(xs, ys)
    assert spearman(xs, ys) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(math.sqrt(0.9), abs=1e-12)


def test_spearman_matches_brute_force(rng):
    for _ in range(100):
        n = int(rng.integers(3, 40))
        xs = rng.integers(0, 8, size=n).astype(float)
        ys = rng.normal(size=n).round(1)
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        assert spearman(xs, ys) == pytest.approx(brute_spearman(xs, ys), abs=1e-12)


def test_spearman_monotone_invariance(rng):
    xs, ys = rng.normal(size=30), rng.normal(size=30)
    rho = spearman(xs, ys)
    assert spearman(np.exp(xs), ys) == rho
    assert spearman(xs, 3.0 * ys + 7.0) == rho


def test_spearman_errors():
    with pytest.raises(UsageError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(UsageError):
        spearman([1], [2])
    with pytest.raises(ShapeError):
        spearman([1, 2], [1, 2, 3])


# -- classification ------------------------------------------------------------------


def test_metrics_from_counts():
    pred = [1, 1, 1, 0, 0] + [0] * 5
    gold = [1, 1, 0, 1, 1] + [0] * 5
    m = classification_metrics(pred, gold)
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 2, 5)
    assert m.accuracy == 0.7
    assert m.precision == pytest.approx(2 / 3)
    assert round(m.precision, 4) == 0.6667
    assert m.recall == 0.5


def test_metrics_edge_cases():
    m = classification_metrics([1, 0, 1], [1, 0, 1])
    assert (m.accuracy, m.precision, m.recall) == (1.0, 1.0, 1.0)
    m = classification_metrics([0, 0, 0], [1, 0, 1])
    assert m.recall == 0.0 and m.precision == 0.0 and m.precision_undefined
    assert m.accuracy == (m.tp + m.tn) / 3


def test_threshold_grid_boundaries():
    assert choose_threshold([0.2, 0.5, 0.9], [1, 1, 1]) == 0.0
    assert choose_threshold([0.2, 0.5, 0.9], [0, 0, 0]) == 0.91  # lowest of the tied best
    assert choose_threshold([0.995, 1.0], [0, 1]) == 1.0
    assert choose_threshold([0.1, 0.45, 0.6, 0.9], [0, 0, 1, 1]) == 0.46
    with pytest.raises(DataError, match="empty dev split"):
        choose_threshold([], [])


def test_separable_embeddings_classify_perfectly():
    table = {"a": [1, 0], "a2": [2, 0], "b": [0, 1], "c": [1, 1], "c2": [3, 3], "d": [1, -1]}
    pairs = [SentencePair("a", "a2"), SentencePair("c", "c2"), SentencePair("a", "b"), SentencePair("c", "d")]
    test = ScoredPairSet(pairs, [1, 1, 0, 0], binary=True)
    for t in (0.01, 0.5, 0.99):
        m = similarity_threshold_eval(TableModel(table), test, threshold=t).metrics
        assert (m.accuracy, m.precision, m.recall) == (1.0, 1.0, 1.0)
    tuned = similarity_threshold_eval(TableModel(table), test, dev=test)
    assert tuned.metrics.accuracy == 1.0
    with pytest.raises(DataError):
        similarity_threshold_eval(TableModel(table), test, dev=test.subset([]))


def test_random_embeddings_are_at_chance():
    g = np.random.default_rng(21)
    n = 1000
    table = {f"s{i}": g.normal(size=16) for i in range(2 * n)}
    pairs = [SentencePair(f"s{2 * i}", f"s{2 * i + 1}") for i in range(n)]
    gold = np.arange(n) % 2
    scored = ScoredPairSet(pairs, gold, binary=True)
    m = similarity_threshold_eval(TableModel(table), scored, threshold=0.0).metrics
    assert abs(m.accuracy - 0.5) <= 0.05


# -- probe ------------------------------------------------------------------------------


def test_probe_separable():
    g = np.random.default_rng(1)
    x = g.normal(size=(200, 3))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    x[:, 0] += np.where(y == 1, 0.5, -0.5)  # margin
    r = logreg_probe(x, y, folds=10)
    assert r.folds == 10 and len(r.fold_accuracies) == 10
    assert r.mean_accuracy >= 0.99


def test_probe_constant_features_gives_majority_rate():
    y = np.array([1] * 70 + [0] * 30, dtype=float)
    r = logreg_probe(np.ones((100, 4)), y, folds=10)
    assert r.mean_accuracy == pytest.approx(0.7, abs=1e-12)


def test_probe_shuffled_labels_at_chance():
    g = np.random.default_rng(2)
    x = g.normal(size=(1000, 8))
    y = g.permutation(np.arange(1000) % 2).astype(float)
    r = logreg_probe(x, y, folds=10)
    assert 0.45 <= r.mean_accuracy <= 0.55


def test_probe_deterministic_and_skips_single_class_folds():
    g = np.random.default_rng(3)
    x = g.normal(size=(40, 2))
    y = (x[:, 1] > 0).astype(float)
    assert logreg_probe(x, y, folds=4) == logreg_probe(x, y, folds=4)
    y_one = np.zeros(10)
    y_one[0] = 1.0  # only fold 0 holds the positive: its training part is single-class
    r = logreg_probe(np.arange(10.0).reshape(10, 1), y_one, folds=5)
    assert r.skipped == [0] and len(r.fold_accuracies) == 4


def test_probe_errors():
    with pytest.raises(UsageError):
        logreg_probe(np.ones((3, 2)), [0, 1, 0], folds=5)
    with pytest.raises(DataError):
        logreg_probe(np.ones((4, 2)), [0, 1, 2, 0], folds=2)


# -- files ----------------------------------------------------------------------------


def test_load_eval_jsonl(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text("".join(json.dumps({"premise": "a", "hypothesis": "b", "score": s}) + "\n" for s in (0.5, 4)))
    scored = load_eval_jsonl(p)
    assert not scored.binary and list(scored.gold) == [0.5, 4.0]
    p.write_text(json.dumps({"premise": "a", "hypothesis": "b", "score": 1}) + "\n"
                 + json.dumps({"premise": "a", "hypothesis": "b", "label": 1}) + "\n")
    with pytest.raises(DataError, match="mixes"):
        load_eval_jsonl(p)
    p.write_text(json.dumps({"premise": "a", "hypothesis": "b"}) + "\n")
    with pytest.raises(DataError, match="line 1"):
        load_eval_jsonl(p)
