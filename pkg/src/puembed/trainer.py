"""Mini-batch training with Adam, linear warmup and an annealed PU term."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import batch_allocation, resolve_priors, sample_batch
from .encoder import DualEncoderModel, Tokenizer
from .errors import CheckpointError, ConfigError, NumericError
from .losses import AnnealSchedule, ClassPriors, anneal_weight, bce_loss, ce_loss, class_risk, pu_loss

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_FIELDS = ("step", "ce_loss", "pu_loss", "anneal_weight", "lr", "corrections")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 7.5e-5
    batch_size: int = 128
    epochs: int = 1
    alpha: float = 3.0
    warmup_fraction: float = 0.10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # False: PU weight fixed at 1 (ablation)
    anneal: bool = True
    # positive-only fallback: anneal L_PU as well
    anneal_pu_only: bool = False
    use_pu: bool = True
    non_negative: bool = True
    clip_norm: float = 0.0
    bucket_count: int = 1 << 14
    lowercase: bool = True
    d_emb: int = 64
    d_enc: int = 64

    def __post_init__(self):
        if self.alpha < 2:
            raise ConfigError(f"alpha must be >= 2, got {self.alpha}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if self.batch_size < 2 or self.epochs < 1:
            raise ConfigError("batch_size must be >= 2 and epochs >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0 (0 disables clipping)")

    @classmethod
    def from_mapping(cls, mapping):
        fields_ = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(mapping) - set(fields_)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        kwargs = {}
        for key, raw in mapping.items():
            kind = type(getattr(cls, key))
            try:
                if kind is bool and isinstance(raw, str):
                    if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError
                    kwargs[key] = raw.lower() in ("true", "1", "yes")
                else:
                    kwargs[key] = kind(raw)
            except ValueError:
                raise ConfigError(f"train key {key!r}: cannot parse {raw!r}") from None
        return cls(**kwargs)

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class TrainState:
    model: DualEncoderModel
    m: dict
    v: dict
    step: int
    total_steps: int
    rng: np.random.Generator
    priors: ClassPriors = None


@dataclass
class StepRecord:
    step: int
    ce_loss: float
    pu_loss: float
    anneal_weight: float
    lr: float
    total_loss: float
    corrected: tuple = field(default=())

    @property
    def corrections(self):
        return sum(self.corrected)


def total_steps(n_pairs, config):
    return math.ceil(n_pairs / config.batch_size) * config.epochs


def lr_at(step, total, config):
    """Linear warmup from 0 over the first ``ceil(warmup_fraction * total)`` steps."""
    warm = math.ceil(config.warmup_fraction * total)
    if warm == 0 or step >= warm:
        return config.learning_rate
    return config.learning_rate * step / warm


def init_state(dataset, config, priors=None):
    seq = np.random.SeedSequence(config.seed)
    model_seed, sample_seed = seq.spawn(2)
    model = DualEncoderModel(
        dataset.num_classes,
        Tokenizer(config.bucket_count, config.lowercase),
        config.d_emb,
        config.d_enc,
        seed=model_seed,
    )
    zeros = {k: np.zeros_like(p) for k, p in model.params.items()}
    return TrainState(model, zeros, {k: z.copy() for k, z in zeros.items()}, 0,
                      total_steps(len(dataset), config), np.random.default_rng(sample_seed), priors)


def adam_step(state, grads, lr, config):
    """Bias-corrected Adam update of ``state.model.params`` at time ``state.step``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NumericError(f"step {state.step}: {bad} non-finite gradient entries in {name!r}")
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        state.model.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return state


def batch_losses(model, batch, priors, mode, leaves=None, use_pu=True, non_negative=True):
    """``(ce, pu, breakdowns)`` for one batch; ``ce`` is None in positive-only mode."""
    leaves = leaves if leaves is not None else model.leaves()
    pairs = [p for subset in batch.labeled for p in subset] + list(batch.unlabeled)
    scores = model.scores(pairs, leaves)
    counts = [len(s) for s in batch.labeled]
    n_lab = sum(counts)

    ce = None
    if mode != "pu-only":
        y = np.zeros((n_lab, model.num_classes))
        row = 0
        for c, k in enumerate(counts):
            y[row:row + k, c] = 1.0
            row += k
        lab_scores = scores[:n_lab]
        ce = bce_loss(lab_scores, y) if mode == "multi-label" else ce_loss(lab_scores, y)

    if not use_pu:
        return ce, None, []
    unl_rows = np.arange(n_lab, len(pairs))
    breakdowns = []
    start = 0
    for c, k in enumerate(counts):
        rows = np.arange(start, start + k)
        start += k
        breakdowns.append(class_risk(scores[rows, c], scores[unl_rows, c], priors[c], non_negative))
    return ce, pu_loss(breakdowns), breakdowns


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads


def train(dataset, config, priors=None, state=None, callback=None, stop_at=None):
    """Train a dual encoder; returns ``(model, history)``.

    ``state`` resumes an earlier run (its step, moments and sampler state).
    ``stop_at`` ends the run early after that global step; the schedule still
    spans the full ``total_steps``. ``callback(state, record)`` runs after
    every step.
    """
    if config.use_pu:
        if dataset.n_unlabeled == 0:
            raise ConfigError("PU training needs unlabeled pairs (set use_pu=false for supervised-only runs)")
        if min(dataset.labeled_counts) == 0:
            raise ConfigError("every class needs at least one labeled pair for its PU risk")
        if priors is None:
            priors = state.priors if state is not None and state.priors is not None else resolve_priors(dataset)
        if len(priors) != dataset.num_classes:
            raise ConfigError("one prior per class is required")
    elif dataset.mode == "pu-only":
        raise ConfigError("positive-only datasets have no supervised loss; use_pu must be true")

    if state is None:
        state = init_state(dataset, config, priors)
    else:
        expected = total_steps(len(dataset), config)
        if state.total_steps != expected:
            raise ConfigError(f"checkpoint total_steps {state.total_steps} != {expected} for this dataset/config")
    state.priors = priors if priors is not None else state.priors
    model = state.model
    schedule = AnnealSchedule(state.total_steps, config.alpha)
    alloc = batch_allocation(dataset, config.batch_size)
    logger.info("training %s for %d steps, allocation %s", dataset.summary(), state.total_steps, alloc)

    last = state.total_steps if stop_at is None else min(int(stop_at), state.total_steps)
    history = []
    while state.step < last:
        t = state.step + 1
        batch = sample_batch(dataset, config.batch_size, state.rng, step=t, allocation=alloc)
        leaves = model.leaves(trainable=True)
        ce, pu, breakdowns = batch_losses(model, batch, priors, dataset.mode, leaves,
                                          config.use_pu, config.non_negative)
        if pu is None:
            weight = 0.0
            loss = ce
        elif ce is None:
            weight = anneal_weight(t, schedule) if config.anneal_pu_only else 1.0
            loss = pu * weight
        else:
            weight = anneal_weight(t, schedule) if config.anneal else 1.0
            loss = ce + pu * weight
        grads = T.gradients(loss, leaves)
        if config.clip_norm > 0:
            grads = _clip(grads, config.clip_norm)
        lr = lr_at(t, state.total_steps, config)
        state.step = t
        adam_step(state, grads, lr, config)
        record = StepRecord(
            step=t,
            ce_loss=0.0 if ce is None else ce.item(),
            pu_loss=0.0 if pu is None else pu.item(),
            anneal_weight=weight,
            lr=lr,
            total_loss=loss.item(),
            corrected=tuple(int(b.correction_applied) for b in breakdowns),
        )
        history.append(record)
        if callback is not None:
            callback(state, record)
    return model, history


def correction_frequency(history):
    """Per-class fraction of steps where the non-negative correction fired."""
    rows = [r.corrected for r in history if r.corrected]
    if not rows:
        return []
    return list(np.mean(np.array(rows, dtype=float), axis=0))


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for r in history:
            writer.writerow([r.step, repr(r.ce_loss), repr(r.pu_loss), repr(r.anneal_weight),
                             repr(r.lr), r.corrections])


# -- checkpoints ---------------------------------------------------------------


def _write_f32(path, arr):
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_f32(path, shape):
    if not path.exists():
        raise CheckpointError(f"missing array file {path.name}")
    expected = int(np.prod(shape)) * 4
    size = path.stat().st_size
    if size != expected:
        raise CheckpointError(f"{path.name}: expected {expected} bytes for shape {shape}, found {size}")
    return np.fromfile(path, dtype="<f4").astype(np.float64).reshape(shape)


def save_checkpoint(state, directory, config=None, label_names=None):
    """Write ``manifest.txt`` plus one ``.f32`` file per parameter (and Adam moment)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = state.model
    for name, arr in model.params.items():
        _write_f32(directory / f"{name}.f32", arr)
        _write_f32(directory / f"adam_m.{name}.f32", state.m[name])
        _write_f32(directory / f"adam_v.{name}.f32", state.v[name])
    lines = {
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "total_steps": state.total_steps,
        "num_classes": model.num_classes,
        "bucket_count": model.tokenizer.bucket_count,
        "lowercase": json.dumps(model.tokenizer.lowercase),
        "d_emb": model.d_emb,
        "d_enc": model.d_enc,
        "label_names": json.dumps(list(label_names) if label_names is not None else None),
        "priors": json.dumps(list(state.priors.pi_p) if state.priors is not None else None),
        "config": json.dumps(config.as_dict() if config is not None else None, sort_keys=True),
        "rng_state": json.dumps(state.rng.bit_generator.state, sort_keys=True),
    }
    for name, arr in model.params.items():
        lines[f"param.{name}"] = "x".join(str(n) for n in arr.shape)
    text = "".join(f"{k} = {v}\n" for k, v in lines.items())
    # manifest goes last and atomically: a directory without it is not a checkpoint
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, directory / "manifest.txt")
    return directory


def read_manifest(directory):
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise CheckpointError(f"no manifest.txt in {directory}")
    entries = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise CheckpointError(f"manifest line {lineno} is not 'key = value'")
        entries[key.strip()] = value
    return entries


def load_checkpoint(directory):
    """Load a :class:`TrainState`; raises :class:`CheckpointError` without partial state."""
    directory = Path(directory)
    entries = read_manifest(directory)
    try:
        version = int(entries["format_version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint format {version} is not supported (expected {CHECKPOINT_VERSION})")
        tokenizer = Tokenizer(int(entries["bucket_count"]), json.loads(entries["lowercase"]))
        num_classes = int(entries["num_classes"])
        d_emb, d_enc = int(entries["d_emb"]), int(entries["d_enc"])
        step, total = int(entries["step"]), int(entries["total_steps"])
        rng_state = json.loads(entries["rng_state"])
        prior_values = json.loads(entries["priors"])
        shapes = {k[len("param."):]: tuple(int(n) for n in v.split("x"))
                  for k, v in entries.items() if k.startswith("param.")}
    except CheckpointError:
        raise
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt manifest in {directory}: {exc!r}") from None

    skeleton = DualEncoderModel.__new__(DualEncoderModel)
    skeleton.tokenizer, skeleton.num_classes, skeleton.d_emb, skeleton.d_enc = tokenizer, num_classes, d_emb, d_enc
    expected = DualEncoderModel.param_shapes(skeleton)
    if shapes != expected:
        raise CheckpointError(f"parameter shapes {shapes} do not match the declared model {expected}")

    params, m, v = {}, {}, {}
    for name, shape in shapes.items():
        params[name] = _read_f32(directory / f"{name}.f32", shape)
        m_path, v_path = directory / f"adam_m.{name}.f32", directory / f"adam_v.{name}.f32"
        m[name] = _read_f32(m_path, shape) if m_path.exists() else np.zeros(shape)
        v[name] = _read_f32(v_path, shape) if v_path.exists() else np.zeros(shape)
    model = DualEncoderModel(num_classes, tokenizer, d_emb, d_enc, params=params)
    rng = np.random.default_rng()
    try:
        rng.bit_generator.state = rng_state
    except (TypeError, ValueError, KeyError) as exc:
        raise CheckpointError(f"bad rng_state: {exc}") from None
    priors = ClassPriors(tuple(prior_values)) if prior_values else None
    return TrainState(model, m, v, step, total, rng, priors)


def checkpoint_metadata(directory):
    """Label names and config echoed in a checkpoint manifest."""
    entries = read_manifest(directory)
    return {
        "label_names": json.loads(entries.get("label_names", "null")),
        "config": json.loads(entries.get("config", "null")),
    }
