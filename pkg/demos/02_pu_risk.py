"""
The per-class PU risk and its correction
========================================

Positives score against +1 and -1, the unlabeled pool against -1. When the
estimated negative risk drops below zero the positive term is dropped and
the sign flips.
"""

import numpy as np

from puembed.data import SynthSpec, oracle_risks, synth_generate
from puembed.encoder import DualEncoderModel, Tokenizer
from puembed.losses import AnnealSchedule, anneal_weight, class_risk, sigmoid_loss

print("sigmoid loss at 0:", sigmoid_loss(0.0, 1), sigmoid_loss(0.0, -1))
print("sigmoid loss at 5, +1:", round(sigmoid_loss(5.0, 1), 6))

# untrained head: every score is 0 and the prior cancels out
r = class_risk(np.zeros(8), np.zeros(32), prior=0.3)
print("zero scores:", r.r_p_plus, r.r_p_minus, r.r_u_minus, "risk", r.corrected_risk)

# unlabeled scores far below the positives: negative risk goes below zero
r = class_risk(np.zeros(8), np.full(32, -10.0), prior=0.5)
print(f"negative risk {r.negative_risk:.4f}, corrected {r.corrected_risk:.4f}, flag {r.correction_applied}")

# on a population with every label known the decomposition is exact
_, pop = synth_generate(SynthSpec(clusters=6, vocab=60, sent_len=4, pairs=400, label_fraction=1.0, seed=1))
model = DualEncoderModel(2, Tokenizer(256), d_emb=8, d_enc=8, seed=1)
o = oracle_risks(pop, model, c=0)
print(f"population prior {o.pi_p:.3f}")
print(f"R_u^- = {o.r_u_minus:.15f}")
print(f"pi_p R_p^- + pi_n R_n^- = {o.pi_p * o.r_p_minus + o.pi_n * o.r_n_minus:.15f}")

# the PU term is ramped in over training
schedule = AnnealSchedule(total_steps=10, alpha=3)
print("anneal weights:", [round(anneal_weight(t, schedule), 4) for t in range(1, 11)])
