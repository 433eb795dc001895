"""Sentence embeddings from positive-unlabeled sentence-pair data.

A weight-shared dual encoder is trained with cross entropy on the labeled
pairs plus a polynomially annealed, non-negative PU risk on the unlabeled
pool. Everything runs on numpy through a small reverse-mode autodiff core.
"""

from .data import PUDataset, SentencePair, SynthSpec, load_jsonl, resolve_priors, sample_batch, synth_generate
from .encoder import DualEncoderModel, Tokenizer, match_features
from .losses import (AnnealSchedule, ClassPriors, RiskBreakdown, anneal_weight, bce_loss, ce_loss,
                     class_risk, pu_loss, sigmoid_loss, total_loss)
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
