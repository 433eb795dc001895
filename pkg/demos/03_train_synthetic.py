"""
Training with a tenth of the labels
===================================

A synthetic pair task: sentences are bags of words from clusters, and a
pair is similar when both sentences share a cluster. Only 10% of the pairs
keep their labels. We compare three runs on the same held-out pairs:

* 10% labels with the annealed PU term,
* cross entropy on the labeled subset alone,
* cross entropy with every label (upper bound).

Smaller than the acceptance experiment, so it runs in seconds.
"""

from dataclasses import replace

import numpy as np

from puembed.data import SynthSpec, resolve_priors, synth_generate
from puembed.trainer import TrainConfig, correction_frequency, train

task = SynthSpec(clusters=20, vocab=800, sent_len=8, pairs=6000, label_fraction=0.1, seed=11)
dataset, population = synth_generate(task)
_, test = synth_generate(replace(task, pairs=1000, label_fraction=1.0, seed=99))
print(dataset.summary())

config = TrainConfig(learning_rate=1e-3, epochs=6, batch_size=128, bucket_count=4096)
gold = test.true_labels()
pairs = test.sentence_pairs()

# the true class fractions are known here; the default would be the labeled fraction
priors = resolve_priors(dataset, [population.true_fraction(c) for c in range(2)])
model, history = train(dataset, config, priors)
acc_pu = np.mean(model.predict(pairs) == gold)
print(f"PU, 10% labels:      {acc_pu:.3f}  ({len(history)} steps, "
      f"correction rate per class {np.round(correction_frequency(history), 3).tolist()})")

model, history = train(dataset.labeled_only(), replace(config, use_pu=False))
print(f"CE on labeled only:  {np.mean(model.predict(pairs) == gold):.3f}  ({len(history)} steps)")

full, _ = synth_generate(replace(task, label_fraction=1.0))
model, history = train(full, replace(config, use_pu=False))
print(f"CE, all labels:      {np.mean(model.predict(pairs) == gold):.3f}  ({len(history)} steps)")

# loss curve in coarse steps
for r in history[:: max(1, len(history) // 8)]:
    print(f"  step {r.step:4d}  ce {r.ce_loss:.4f}  lr {r.lr:.2e}")
