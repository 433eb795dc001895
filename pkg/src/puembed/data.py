"""Partially labeled sentence-pair datasets, batch sampling and class priors.

A dataset is split into ``C`` labeled subsets (one per class) plus one
unlabeled pool. Mini-batches draw from every subset in proportion to its
size, so each batch mirrors the composition of the whole dataset.

The synthetic generator builds pairs of "sentences" drawn from word clusters
and keeps the true label of every pair, which makes exact population risks
available for checking the risk decomposition.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .losses import ClassPriors, sigmoid_loss

logger = logging.getLogger(__name__)

MODES = ("mono-label", "multi-label", "pu-only")
UNLABELED_TOKENS = ("-",)


@dataclass(frozen=True)
class SentencePair:
    premise: str
    hypothesis: str


@dataclass
class PUDataset:
    labeled: list
    unlabeled: list
    label_names: list
    mode: str = None

    def __post_init__(self):
        if len(self.labeled) < 1:
            raise ConfigError("a dataset needs at least one class")
        if len(self.label_names) != len(self.labeled):
            raise ConfigError("label_names must have one entry per class")
        if self.mode is None:
            self.mode = "pu-only" if len(self.labeled) == 1 else "mono-label"
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "pu-only" and len(self.labeled) != 1:
            raise ConfigError("pu-only mode requires exactly one class")

    @property
    def num_classes(self):
        return len(self.labeled)

    @property
    def labeled_counts(self):
        return [len(s) for s in self.labeled]

    @property
    def n_labeled(self):
        return sum(self.labeled_counts)

    @property
    def n_unlabeled(self):
        return len(self.unlabeled)

    def __len__(self):
        return self.n_labeled + self.n_unlabeled

    def label_matrix(self):
        """One-hot ``N_p x C`` labels in subset order."""
        y = np.zeros((self.n_labeled, self.num_classes))
        row = 0
        for c, subset in enumerate(self.labeled):
            y[row:row + len(subset), c] = 1.0
            row += len(subset)
        return y

    def labeled_only(self):
        """The same labeled subsets with the unlabeled pool dropped."""
        return PUDataset([list(s) for s in self.labeled], [], list(self.label_names), self.mode)

    def summary(self):
        parts = [f"{n}={k}" for n, k in zip(self.label_names, self.labeled_counts)]
        return f"C={self.num_classes} mode={self.mode} labeled[{', '.join(parts)}] unlabeled={self.n_unlabeled}"


@dataclass
class Batch:
    labeled: list
    unlabeled: list
    step: int = 0

    @property
    def counts(self):
        return [len(s) for s in self.labeled] + [len(self.unlabeled)]

    def __len__(self):
        return sum(self.counts)


# -- file I/O ----------------------------------------------------------------


def load_jsonl(path, label_map=None, unlabeled_tokens=UNLABELED_TOKENS, mode=None):
    """Read ``{"premise", "hypothesis", "label"}`` lines into a dataset.

    ``label: null`` (or one of ``unlabeled_tokens``, e.g. the "-" used for
    pairs without annotator consensus) goes to the unlabeled pool. Labels map
    to classes in first-seen order unless ``label_map`` (name -> index) is
    given.
    """
    names = {} if label_map is None else dict(label_map)
    if label_map is not None and sorted(names.values()) != list(range(len(names))):
        raise ConfigError("label_map indices must be 0..C-1")
    labeled = {}
    unlabeled = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise DataError("expected a JSON object", lineno)
            premise, hypothesis = obj.get("premise"), obj.get("hypothesis")
            if not isinstance(premise, str) or not isinstance(hypothesis, str):
                raise DataError("premise and hypothesis must be strings", lineno)
            if "label" not in obj:
                raise DataError("missing 'label' field (use null for unlabeled)", lineno)
            label = obj["label"]
            pair = SentencePair(premise, hypothesis)
            if label is None or label in unlabeled_tokens:
                unlabeled.append(pair)
                continue
            if not isinstance(label, str):
                raise DataError(f"label must be a string or null, got {label!r}", lineno)
            if label not in names:
                if label_map is not None:
                    raise DataError(f"unknown label {label!r}", lineno)
                names[label] = len(names)
            labeled.setdefault(names[label], []).append(pair)
    if not labeled and not unlabeled:
        raise DataError("empty dataset")
    if not names:
        raise DataError("dataset has no labeled pairs")
    ordered = sorted(names, key=names.get)
    ds = PUDataset([labeled.get(i, []) for i in range(len(ordered))], unlabeled, ordered, mode)
    logger.info("loaded %s: %s", path, ds.summary())
    return ds


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def dataset_records(dataset):
    for name, subset in zip(dataset.label_names, dataset.labeled):
        for p in subset:
            yield {"premise": p.premise, "hypothesis": p.hypothesis, "label": name}
    for p in dataset.unlabeled:
        yield {"premise": p.premise, "hypothesis": p.hypothesis, "label": None}


# -- sampling ----------------------------------------------------------------


def proportional_allocation(sizes, total):
    """Split ``total`` slots across subsets in proportion to ``sizes``.

    Largest-remainder rounding where equal remainders are served together:
    if a group of tied remainders cannot all receive a slot, the slot goes to
    the next remainder group instead, so equally sized subsets always get
    equal shares. Index order breaks ties only when no group fits.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    n = int(sizes.sum())
    if n <= 0:
        raise ConfigError("cannot allocate over empty subsets")
    scaled = sizes * total  # exact integer arithmetic: quota = scaled / n
    alloc = scaled // n
    rem = scaled % n
    left = total - int(alloc.sum())
    served = np.zeros(len(sizes), dtype=bool)
    for r in sorted(set(rem[rem > 0].tolist()), reverse=True):
        group = np.flatnonzero(rem == r)
        if len(group) <= left:
            alloc[group] += 1
            served[group] = True
            left -= len(group)
    for i in sorted(range(len(sizes)), key=lambda i: (-rem[i], i)):
        if left == 0:
            break
        if rem[i] > 0 and not served[i]:
            alloc[i] += 1
            left -= 1
    return [int(a) for a in alloc]


def batch_allocation(dataset, batch_size):
    """Slots per subset (labeled classes first, unlabeled last) for one batch."""
    sizes = dataset.labeled_counts + [dataset.n_unlabeled]
    needed = sum(1 for s in sizes if s > 0)
    if batch_size < dataset.num_classes + 1 or batch_size < needed:
        raise ConfigError(f"batch_size {batch_size} must be >= C + 1 = {dataset.num_classes + 1}")
    alloc = proportional_allocation(sizes, batch_size)
    for i, s in enumerate(sizes):
        if s > 0 and alloc[i] == 0:
            donor = max(range(len(alloc)), key=lambda j: (alloc[j], -j))
            alloc[donor] -= 1
            alloc[i] = 1
    return alloc


def _draw(subset, k, rng):
    if k == 0:
        return []
    idx = rng.choice(len(subset), size=k, replace=len(subset) < k)
    return [subset[i] for i in idx]


def sample_batch(dataset, batch_size, rng, step=0, allocation=None):
    """Draw one composition-preserving batch."""
    if len(dataset) == 0:
        raise ConfigError("cannot sample from an empty dataset")
    alloc = allocation if allocation is not None else batch_allocation(dataset, batch_size)
    labeled = [_draw(subset, k, rng) for subset, k in zip(dataset.labeled, alloc[:-1])]
    return Batch(labeled, _draw(dataset.unlabeled, alloc[-1], rng), step)


# -- priors ------------------------------------------------------------------


def resolve_priors(dataset, overrides=None):
    """Positive prior per class: explicit overrides, else the labeled fraction.

    The default ``N_p^(c) / (N_p + N_u)`` underestimates the true positive
    rate whenever some positives are unlabeled; pass the real priors when
    they are known.
    """
    if overrides is not None:
        overrides = [float(p) for p in overrides]
        if len(overrides) != dataset.num_classes:
            raise ConfigError(f"expected {dataset.num_classes} priors, got {len(overrides)}")
        priors = ClassPriors(tuple(overrides))
        logger.info("class priors (override): %s", priors.pi_p)
        return priors
    total = len(dataset)
    values = tuple(min(max(n / total, 1e-3), 1 - 1e-3) for n in dataset.labeled_counts)
    logger.warning("class priors defaulted to labeled fractions %s; these are biased low "
                   "when positives remain in the unlabeled pool, pass overrides if known", values)
    return ClassPriors(values)


# -- synthetic data ----------------------------------------------------------

SYNTH_KEYS = ("clusters", "vocab", "sent_len", "pairs", "label_fraction", "seed",
              "classes", "similar_fraction", "noise")


@dataclass(frozen=True)
class SynthSpec:
    clusters: int = 20
    vocab: int = 2000
    sent_len: int = 8
    pairs: int = 1000
    label_fraction: float = 0.1
    seed: int = 0
    classes: int = 2
    similar_fraction: float = 0.5
    noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ConfigError("label_fraction must lie in [0, 1]")
        if self.clusters < 2:
            raise ConfigError("need at least 2 clusters")
        if self.vocab < self.clusters:
            raise ConfigError(f"vocab ({self.vocab}) must be >= clusters ({self.clusters})")
        if self.classes not in (1, 2, 3):
            raise ConfigError("classes must be 1 (positive-only), 2 (binary) or 3 (relation buckets)")
        if self.classes == 3 and self.clusters < 5:
            raise ConfigError("3-class relation buckets need at least 5 clusters")
        if self.sent_len < 1 or self.pairs < 1:
            raise ConfigError("sent_len and pairs must be positive")
        if not 0.0 < self.similar_fraction < 1.0:
            raise ConfigError("similar_fraction must lie in (0, 1)")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, mapping):
        unknown = set(mapping) - set(SYNTH_KEYS)
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        kwargs = {}
        for key, raw in mapping.items():
            kind = type(getattr(cls, key))
            try:
                kwargs[key] = kind(raw)
            except ValueError:
                raise ConfigError(f"synth key {key!r}: cannot parse {raw!r}") from None
        return cls(**kwargs)

    @property
    def label_names(self):
        return {1: ["similar"], 2: ["similar", "dissimilar"], 3: ["same", "near", "far"]}[self.classes]


@dataclass(frozen=True)
class PopulationPair:
    premise: str
    hypothesis: str
    label: int
    labeled: bool
    clusters: tuple


@dataclass
class SyntheticPopulation:
    spec: SynthSpec
    centers: np.ndarray
    inventories: list
    pairs: list = field(repr=False)

    @property
    def label_names(self):
        return self.spec.label_names

    def true_labels(self):
        return np.array([p.label for p in self.pairs])

    def true_fraction(self, c):
        return float(np.mean(self.true_labels() == c))

    def sentence_pairs(self):
        return [SentencePair(p.premise, p.hypothesis) for p in self.pairs]

    def records(self):
        names = self.label_names
        for p in self.pairs:
            yield {"premise": p.premise, "hypothesis": p.hypothesis,
                   "label": names[p.label], "labeled": p.labeled}

    def dataset_records(self):
        """Dataset view in population order: hidden labels become null."""
        names = self.label_names
        for p in self.pairs:
            yield {"premise": p.premise, "hypothesis": p.hypothesis,
                   "label": names[p.label] if p.labeled else None}


def _relation(i, j, k):
    d = min((i - j) % k, (j - i) % k)
    return 0 if d == 0 else 1 if d == 1 else 2


def synth_generate(spec):
    """Generate ``(dataset, population)`` for a :class:`SynthSpec`.

    Word ``w`` belongs to cluster ``w mod clusters``; cluster centers sit on a
    circle. A pair is "similar" when both sentences come from one cluster.
    With ``classes=3`` the class is the circular distance bucket between the
    two clusters (same, adjacent, far). Exactly ``ceil(label_fraction *
    pairs)`` labels are kept, spread over classes in proportion to their size
    (positive-only mode keeps them among similar pairs).
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.clusters
    words = [f"w{i:05d}" for i in range(spec.vocab)]
    inventories = [words[c::k] for c in range(k)]
    angles = 2 * np.pi * np.arange(k) / k
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sentence(c):
        inv = inventories[c]
        picks = rng.integers(0, len(inv), size=spec.sent_len)
        noisy = rng.random(spec.sent_len) < spec.noise
        toks = [words[rng.integers(0, spec.vocab)] if nz else inv[p] for p, nz in zip(picks, noisy)]
        return " ".join(toks)

    raw = []
    for _ in range(spec.pairs):
        i = int(rng.integers(0, k))
        if spec.classes == 3:
            target = int(rng.integers(0, 3))
            if target == 0:
                j = i
            elif target == 1:
                j = (i + (1 if rng.random() < 0.5 else -1)) % k
            else:
                far = [j for j in range(k) if _relation(i, j, k) == 2]
                j = far[int(rng.integers(0, len(far)))]
            label = _relation(i, j, k)
        else:
            if rng.random() < spec.similar_fraction:
                j = i
            else:
                j = int((i + rng.integers(1, k)) % k)
            label = 0 if i == j else 1
        raw.append((sentence(i), sentence(j), label, (i, j)))

    labels = np.array([r[2] for r in raw])
    n_keep = math.ceil(spec.label_fraction * spec.pairs)
    keep = np.zeros(spec.pairs, dtype=bool)
    if spec.classes == 1:
        positives = np.flatnonzero(labels == 0)
        n_keep = min(n_keep, len(positives))
        if n_keep == 0:
            raise ConfigError("PU mode requires some positives")
        keep[rng.choice(positives, size=n_keep, replace=False)] = True
    elif n_keep:
        members = [np.flatnonzero(labels == c) for c in range(spec.classes)]
        quota = proportional_allocation([len(m) for m in members], n_keep)
        for m, q in zip(members, quota):
            keep[rng.choice(m, size=q, replace=False)] = True

    pairs = [PopulationPair(a, b, int(lab), bool(kp), ij) for (a, b, lab, ij), kp in zip(raw, keep)]
    population = SyntheticPopulation(spec, centers, inventories, pairs)

    n_cls = spec.classes
    labeled = [[] for _ in range(n_cls)]
    unlabeled = []
    for p in pairs:
        sp_ = SentencePair(p.premise, p.hypothesis)
        (labeled[p.label] if p.labeled else unlabeled).append(sp_)
    mode = "pu-only" if n_cls == 1 else "mono-label"
    dataset = PUDataset(labeled, unlabeled, list(spec.label_names), mode)
    return dataset, population


# -- exact population risks --------------------------------------------------


@dataclass(frozen=True)
class OracleRisks:
    r_p_plus: float
    r_p_minus: float
    r_n_minus: float
    r_u_minus: float
    pi_p: float

    @property
    def pi_n(self):
        return 1.0 - self.pi_p


def oracle_risks(population, model, c, scores=None):
    """Exact risks for class ``c`` over every pair of the population.

    Positives are pairs whose true class is ``c``; the unlabeled marginal is
    the whole population. An empty positive or negative part contributes a
    zero risk (its prior is zero then).
    """
    if scores is None:
        scores = model.scores(population.sentence_pairs()).data
    s = np.asarray(scores, dtype=np.float64)[:, c]
    truth = population.true_labels() == c
    n = len(s)
    loss_pos = sigmoid_loss(s, 1)
    loss_neg = sigmoid_loss(s, -1)

    def avg(v, mask):
        return float(v[mask].sum() / mask.sum()) if mask.any() else 0.0

    return OracleRisks(
        r_p_plus=avg(loss_pos, truth),
        r_p_minus=avg(loss_neg, truth),
        r_n_minus=avg(loss_neg, ~truth),
        r_u_minus=float(loss_neg.sum() / n),
        pi_p=float(truth.sum() / n),
    )
