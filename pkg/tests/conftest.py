import numpy as np
import pytest

from puembed.data import SynthSpec, synth_generate
from puembed.encoder import DualEncoderModel, Tokenizer


def small_model(num_classes=2, seed=0, bucket_count=64, d_emb=6, d_enc=5):
    return DualEncoderModel(num_classes, Tokenizer(bucket_count), d_emb=d_emb, d_enc=d_enc, seed=seed)


def zero_head(model):
    for name in ("head_w1", "head_b1", "head_w2", "head_b2"):
        model.params[name][...] = 0.0
    return model


@pytest.fixture
def tiny_model():
    return small_model()


@pytest.fixture
def tiny_task():
    """Small binary synthetic dataset and its population."""
    return synth_generate(SynthSpec(clusters=6, vocab=60, sent_len=4, pairs=200, label_fraction=0.2, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
