"""Embedding evaluation: STS-style rank correlation, thresholded pair
classification and a cross-validated logistic-regression probe."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import SentencePair
from .errors import DataError, ShapeError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class ScoredPairSet:
    pairs: list
    gold: np.ndarray
    binary: bool

    def __post_init__(self):
        self.gold = np.asarray(self.gold, dtype=np.float64)
        if len(self.pairs) != len(self.gold):
            raise DataError("pairs and gold scores differ in length")
        if not np.all(np.isfinite(self.gold)):
            raise DataError("gold scores must be finite")
        if self.binary and not np.all(np.isin(self.gold, (0.0, 1.0))):
            raise DataError("binary gold labels must be 0 or 1")

    def __len__(self):
        return len(self.pairs)

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return ScoredPairSet([self.pairs[i] for i in index], self.gold[index], self.binary)


def load_eval_jsonl(path):
    """Pairs with either a continuous ``score`` or a binary ``label`` (0/1) on every line."""
    pairs, gold, kinds = [], [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict) or not isinstance(obj.get("premise"), str) \
                    or not isinstance(obj.get("hypothesis"), str):
                raise DataError("expected premise and hypothesis strings", lineno)
            if "score" in obj and isinstance(obj["score"], (int, float)) and not isinstance(obj["score"], bool):
                kinds.add("score")
                gold.append(float(obj["score"]))
            elif obj.get("label") in (0, 1) and not isinstance(obj.get("label"), bool):
                kinds.add("label")
                gold.append(float(obj["label"]))
            else:
                raise DataError("needs a numeric 'score' or a 0/1 'label'", lineno)
            pairs.append(SentencePair(obj["premise"], obj["hypothesis"]))
    if len(kinds) > 1:
        raise DataError("mixes 'score' and 'label' lines")
    return ScoredPairSet(pairs, np.array(gold), kinds == {"label"})


# -- similarity and correlation ----------------------------------------------


def cosine_similarity(u, v):
    """Cosine of the angle between ``u`` and ``v``; 0 when either is (near) zero."""
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError("cosine_similarity", f"{u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        logger.warning("degenerate (near-zero) embedding; cosine similarity set to 0")
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def pairwise_cosine(us, vs):
    """Row-wise cosine similarity of two ``n x d`` arrays."""
    us, vs = np.asarray(us, dtype=np.float64), np.asarray(vs, dtype=np.float64)
    if us.shape != vs.shape:
        raise ShapeError("pairwise_cosine", f"{us.shape} vs {vs.shape}")
    nu, nv = np.linalg.norm(us, axis=1), np.linalg.norm(vs, axis=1)
    ok = (nu >= 1e-12) & (nv >= 1e-12)
    if not ok.all():
        logger.warning("%d degenerate embeddings; cosine similarity set to 0", int((~ok).sum()))
    out = np.zeros(len(us))
    out[ok] = np.einsum("ij,ij->i", us[ok], vs[ok]) / (nu[ok] * nv[ok])
    return np.clip(out, -1.0, 1.0)


def spearman(xs, ys):
    """Spearman's rho with average ranks for ties."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ShapeError("spearman", f"{xs.shape} vs {ys.shape}")
    if len(xs) < 2:
        raise UsageError("spearman needs at least two observations")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise UsageError("spearman is undefined for constant input")
    rx = rankdata(xs) - (len(xs) + 1) / 2
    ry = rankdata(ys) - (len(ys) + 1) / 2
    return float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))


def pair_similarities(model, pairs):
    """Cosine similarity of ``g(premise)`` and ``g(hypothesis)`` for each pair."""
    u = model.embed_texts([p.premise for p in pairs])
    v = model.embed_texts([p.hypothesis for p in pairs])
    return pairwise_cosine(u, v)


def sts_eval(model, scored):
    """Spearman correlation between embedding cosine similarities and gold scores."""
    return spearman(pair_similarities(model, scored.pairs), scored.gold)


# -- binary pair classification -----------------------------------------------


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_undefined: bool = False
    recall_undefined: bool = False


def classification_metrics(predicted, gold):
    predicted = np.asarray(predicted).astype(bool)
    gold = np.asarray(gold).astype(bool)
    if predicted.shape != gold.shape:
        raise ShapeError("classification_metrics", f"{predicted.shape} vs {gold.shape}")
    tp = int(np.sum(predicted & gold))
    fp = int(np.sum(predicted & ~gold))
    fn = int(np.sum(~predicted & gold))
    tn = int(np.sum(~predicted & ~gold))
    n = tp + fp + fn + tn
    return ClassificationReport(
        accuracy=(tp + tn) / n if n else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        tp=tp, fp=fp, fn=fn, tn=tn,
        precision_undefined=tp + fp == 0,
        recall_undefined=tp + fn == 0,
    )


THRESHOLD_GRID = np.round(np.arange(0, 101) * 0.01, 2)


def choose_threshold(similarities, gold, grid=THRESHOLD_GRID):
    """Grid threshold maximizing accuracy of ``similarity >= threshold``; lowest wins ties."""
    similarities = np.asarray(similarities)
    gold = np.asarray(gold).astype(bool)
    if len(similarities) == 0:
        raise DataError("empty dev split")
    acc = [np.mean((similarities >= t) == gold) for t in grid]
    return float(grid[int(np.argmax(acc))])


@dataclass(frozen=True)
class ThresholdReport:
    threshold: float
    metrics: ClassificationReport


def similarity_threshold_eval(model, test, dev=None, threshold=None):
    """Classify pairs as similar iff cosine similarity >= threshold.

    The threshold is tuned on ``dev`` (grid step 0.01 over [0, 1]) unless
    given explicitly.
    """
    if not test.binary:
        raise DataError("threshold evaluation needs binary gold labels")
    if threshold is None:
        if dev is None or len(dev) == 0:
            raise DataError("empty dev split")
        threshold = choose_threshold(pair_similarities(model, dev.pairs), dev.gold)
    sims = pair_similarities(model, test.pairs)
    return ThresholdReport(threshold, classification_metrics(sims >= threshold, test.gold))


# -- logistic-regression probe --------------------------------------------------


@dataclass
class ProbeReport:
    fold_accuracies: list
    mean_accuracy: float
    folds: int
    skipped: list = field(default_factory=list)


def _fit_logreg(x, y, reg, tol, max_iter):
    n, d = x.shape
    xb = np.hstack([x, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.eigvalsh(xb.T @ xb / n).max() + reg
    step = 1.0 / lipschitz
    w = np.zeros(d + 1)
    penalty = np.full(d + 1, reg)
    penalty[-1] = 0.0
    for _ in range(max_iter):
        z = xb @ w
        p = np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))
        grad = xb.T @ (p - y) / n + penalty * w
        if np.linalg.norm(grad) < tol:
            break
        w -= step * grad
    return w


def logreg_probe(features, labels, folds=10, reg=1e-4, tol=1e-6, max_iter=10_000):
    """k-fold accuracy of an L2 logistic regression on frozen features.

    Fold ``f`` holds the samples whose index is ``f`` modulo ``folds``.
    Features are standardized with training-fold statistics. A fold whose
    training part has a single class is skipped and listed in ``skipped``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError("logreg_probe", f"features {x.shape} vs labels {y.shape}")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("probe labels must be binary")
    if folds < 2 or len(x) < folds:
        raise UsageError(f"need N >= folds >= 2, got N={len(x)}, folds={folds}")
    idx = np.arange(len(x))
    accs, skipped = [], []
    for f in range(folds):
        test = idx % folds == f
        ytr = y[~test]
        if np.all(ytr == ytr[0]):
            skipped.append(f)
            continue
        mu = x[~test].mean(axis=0)
        sd = x[~test].std(axis=0)
        sd[sd < 1e-12] = 1.0
        w = _fit_logreg((x[~test] - mu) / sd, ytr, reg, tol, max_iter)
        xt = (x[test] - mu) / sd
        pred = (xt @ w[:-1] + w[-1]) >= 0
        accs.append(float(np.mean(pred == y[test].astype(bool))))
    mean = float(np.mean(accs)) if accs else float("nan")
    return ProbeReport(accs, mean, folds, skipped)


def pair_features(model, pairs):
    """``[|u - v|; u * v]`` probe features for sentence pairs."""
    u = model.embed_texts([p.premise for p in pairs])
    v = model.embed_texts([p.hypothesis for p in pairs])
    return np.hstack([np.abs(u - v), u * v])
