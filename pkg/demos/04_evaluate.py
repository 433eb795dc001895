"""
Evaluating the sentence embeddings
==================================

Train briefly, then score the embeddings three ways: rank correlation of
cosine similarity with graded scores, thresholded cosine classification,
and a logistic-regression probe on pair features.
"""

from dataclasses import replace

import numpy as np

from puembed.data import SynthSpec, resolve_priors, synth_generate
from puembed.evaluate import (ScoredPairSet, logreg_probe, pair_features, pair_similarities,
                              similarity_threshold_eval, spearman)
from puembed.trainer import TrainConfig, train

task = SynthSpec(clusters=12, vocab=480, sent_len=6, pairs=3000, label_fraction=0.1, seed=5)
dataset, population = synth_generate(task)
priors = resolve_priors(dataset, [population.true_fraction(c) for c in range(2)])
model, _ = train(dataset, TrainConfig(learning_rate=1e-3, epochs=8, bucket_count=2048), priors)

_, held_out = synth_generate(replace(task, pairs=600, label_fraction=1.0, seed=6))
pairs = held_out.sentence_pairs()
similar = (held_out.true_labels() == 0).astype(float)

# graded relatedness: circular distance between the two clusters, 5 = same cluster
k = task.clusters
dist = np.array([min((i - j) % k, (j - i) % k) for i, j in (p.clusters for p in held_out.pairs)])
graded = 5.0 * (1 - dist / (k // 2))
sims = pair_similarities(model, pairs)
print(f"spearman(cosine, graded score) = {spearman(sims, graded):.3f}")

# threshold tuned on the first half, applied to the second
scored = ScoredPairSet(pairs, similar, binary=True)
half = len(pairs) // 2
report = similarity_threshold_eval(model, scored.subset(np.arange(half, len(pairs))),
                                   dev=scored.subset(np.arange(half)))
m = report.metrics
print(f"threshold {report.threshold:.2f}: accuracy {m.accuracy:.3f} precision {m.precision:.3f} recall {m.recall:.3f}")

probe = logreg_probe(pair_features(model, pairs), similar, folds=10)
print(f"probe accuracy over {probe.folds} folds: {probe.mean_accuracy:.3f}")
