"""Label-efficiency experiment on a synthetic binary similarity task.

Arms (all share one seeded dataset and held-out test set):

* ``pu``: partially labeled dataset, CE on labeled pairs + annealed PU loss.
* ``pu_no_anneal``: same, PU weight fixed at 1.
* ``ce_labeled``: CE only, trained on the labeled subset alone for the same
  number of epochs (fewer steps, since the dataset is smaller).
* ``ce_matched``: CE only on the labeled pairs, but sampling batches from the
  full dataset so the step budget matches ``pu`` (diagnostic control).
* ``ce_full``: every pair labeled, CE only (upper bound).

Accuracy is the argmax of the head's scores on the test pairs.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import SynthSpec, resolve_priors, synth_generate
from .trainer import TrainConfig, train

ARMS = ("pu", "pu_no_anneal", "ce_labeled", "ce_matched", "ce_full")


@dataclass(frozen=True)
class LabelEfficiencySetup:
    task: SynthSpec = SynthSpec(clusters=20, vocab=800, sent_len=8, pairs=20000, label_fraction=0.1, seed=2024)
    test_pairs: int = 2000
    test_seed: int = 7777
    config: TrainConfig = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=128, bucket_count=4096)

    def datasets(self, label_fraction=None):
        task = self.task if label_fraction is None else replace(self.task, label_fraction=label_fraction)
        dataset, population = synth_generate(task)
        _, test = synth_generate(replace(self.task, pairs=self.test_pairs, label_fraction=1.0,
                                         seed=self.test_seed))
        return dataset, population, test


def run_arm(setup, arm, seed):
    """Test accuracy of one arm trained with ``seed``."""
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}")
    dataset, population, test = setup.datasets(1.0 if arm == "ce_full" else None)
    config = replace(setup.config, seed=seed)
    priors = None
    if arm in ("pu", "pu_no_anneal"):
        # true class fractions of the population: the priors are task knowledge
        priors = resolve_priors(dataset, [population.true_fraction(c) for c in range(dataset.num_classes)])
        config = replace(config, anneal=arm == "pu")
    else:
        config = replace(config, use_pu=False)
        if arm == "ce_labeled":
            dataset = dataset.labeled_only()
    model, _ = train(dataset, config, priors)
    return float(np.mean(model.predict(test.sentence_pairs()) == test.true_labels()))


def _run(args):
    return run_arm(*args)


def run_grid(setup, arms, seeds, workers=None):
    """``{arm: [accuracy per seed]}``, fanned out over processes."""
    jobs = [(setup, arm, s) for arm in arms for s in seeds]
    workers = workers or min(4, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            accs = list(pool.map(_run, jobs))
    else:
        accs = [_run(j) for j in jobs]
    out = {arm: [] for arm in arms}
    for (_, arm, _), acc in zip(jobs, accs):
        out[arm].append(acc)
    return out
