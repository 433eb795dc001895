"""Supervised and positive-unlabeled training objectives.

Per class ``c`` the PU risk treats pairs labeled ``c`` as positives and the
unlabeled pool as a mixture with positive prior ``pi_p``:

    positive risk  = pi_p * R_p^+
    negative risk  = R_u^- - pi_p * R_p^-

and the non-negative correction keeps ``pi_p * R_p^+ + negative risk`` when
the negative risk is >= 0, otherwise it drops the positive risk and
minimizes ``-negative risk`` (gradient ascent on the negative risk).
The surrogate loss is the sigmoid loss ``l(a, b) = 1 / (1 + exp(a * b))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, EstimatorError, UsageError
from .tensor import Tensor, _stable_sigmoid


@dataclass(frozen=True)
class ClassPriors:
    pi_p: tuple

    def __post_init__(self):
        values = tuple(float(p) for p in self.pi_p)
        if not values:
            raise ConfigError("at least one class prior is required")
        for c, p in enumerate(values):
            if not 0.0 < p < 1.0:
                raise ConfigError(f"prior for class {c} must lie in (0, 1), got {p}")
        object.__setattr__(self, "pi_p", values)

    @property
    def pi_n(self):
        return tuple(1.0 - p for p in self.pi_p)

    def __len__(self):
        return len(self.pi_p)

    def __getitem__(self, c):
        return self.pi_p[c]


@dataclass
class RiskBreakdown:
    r_p_plus: float
    r_p_minus: float
    r_u_minus: float
    prior: float
    negative_risk: float
    corrected_risk: float
    correction_applied: bool
    # differentiable corrected risk; gradient follows the selected branch
    loss: Tensor = field(repr=False)


@dataclass(frozen=True)
class AnnealSchedule:
    total_steps: int
    alpha: float = 3.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.alpha < 2:
            raise ConfigError(f"alpha must be >= 2, got {self.alpha}")


def sigmoid_loss(a, b):
    """``1 / (1 + exp(a * b))`` for labels ``b`` in {-1, +1}, evaluated stably."""
    b_arr = np.asarray(b)
    if not (b_arr.ndim == 0 and b in (-1, 1)) and not np.all(np.isin(b_arr, (-1, 1))):
        raise UsageError(f"sigmoid_loss labels must be -1 or +1, got {b}")
    if isinstance(a, Tensor):
        return T.sigmoid(a * (-b_arr.astype(np.float64)))
    out = _stable_sigmoid(np.atleast_1d(-np.asarray(a, dtype=np.float64) * b_arr))
    return float(out[0]) if np.ndim(a) == 0 and b_arr.ndim == 0 else out


def _check_labels(scores, labels, name):
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 2 or labels.shape != scores.shape:
        raise UsageError(f"{name}: scores {scores.shape} and labels {labels.shape} must both be N x C")
    if scores.shape[0] < 1:
        raise UsageError(f"{name}: needs at least one labeled sample")
    if not np.all((labels == 0) | (labels == 1)):
        raise UsageError(f"{name}: labels must be 0/1")
    return labels


def ce_loss(scores, labels):
    """Mono-label cross entropy normalized by ``C * N``."""
    scores = T.as_tensor(scores)
    labels = _check_labels(scores, labels, "ce_loss")
    if not np.all(labels.sum(axis=1) == 1):
        raise UsageError("ce_loss: every label row must be one-hot")
    n, c = scores.shape
    return T.sum(T.log_softmax(scores, axis=1) * labels) * (-1.0 / (c * n))


def bce_loss(scores, labels):
    """Multi-label binary cross entropy over positive entries, normalized by ``C * N``."""
    scores = T.as_tensor(scores)
    labels = _check_labels(scores, labels, "bce_loss")
    n, c = scores.shape
    return T.sum(T.log_sigmoid(scores) * labels) * (-1.0 / (c * n))


def class_risk(pos_scores, unl_scores, prior, non_negative=True):
    """Corrected PU risk for one class from its positive and unlabeled scores.

    ``non_negative=False`` returns the uncorrected (unbiased) estimate; it is
    only meant for diagnostics.
    """
    pos, unl = T.as_tensor(pos_scores), T.as_tensor(unl_scores)
    if pos.size == 0:
        raise EstimatorError("no positive scores for this class")
    if unl.size == 0:
        raise EstimatorError("no unlabeled scores for this class")
    if not 0.0 < prior < 1.0:
        raise ConfigError(f"prior must lie in (0, 1), got {prior}")

    r_p_plus = T.mean(sigmoid_loss(pos, 1))
    r_p_minus = T.mean(sigmoid_loss(pos, -1))
    r_u_minus = T.mean(sigmoid_loss(unl, -1))
    negative = r_u_minus - prior * r_p_minus

    corrected = non_negative and negative.item() < 0
    loss = -negative if corrected else prior * r_p_plus + negative
    return RiskBreakdown(
        r_p_plus=r_p_plus.item(),
        r_p_minus=r_p_minus.item(),
        r_u_minus=r_u_minus.item(),
        prior=float(prior),
        negative_risk=negative.item(),
        corrected_risk=loss.item(),
        correction_applied=bool(corrected),
        loss=loss,
    )


def pu_loss(breakdowns):
    """Average corrected risk over classes."""
    if not breakdowns:
        raise UsageError("pu_loss needs at least one class")
    total = breakdowns[0].loss
    for b in breakdowns[1:]:
        total = total + b.loss
    return total * (1.0 / len(breakdowns))


def anneal_weight(t, schedule):
    """``(t / T) ** alpha`` for ``1 <= t <= T``."""
    if not 1 <= t <= schedule.total_steps:
        raise UsageError(f"step {t} outside [1, {schedule.total_steps}]")
    return (t / schedule.total_steps) ** schedule.alpha


def total_loss(ce, pu, t, schedule, anneal_pu_only=False):
    """Joint objective ``ce + (t/T)**alpha * pu``.

    ``ce=None`` is the positive-only fallback: the loss is ``pu`` itself,
    annealed only when ``anneal_pu_only`` is set.
    """
    if ce is None:
        return pu * anneal_weight(t, schedule) if anneal_pu_only else pu
    return ce + anneal_weight(t, schedule) * pu
