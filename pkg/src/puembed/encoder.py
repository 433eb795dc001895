"""Hashed bag-of-embeddings dual encoder with a matching head.

Both sentences of a pair go through one shared parameter set: mean-pooled
token embeddings, then a two-layer MLP, giving ``g(x)``. The head sees
``[u; v; |u - v|; u * v]``, applies a 128-wide ELU layer and a linear
``C``-way output layer. Scores are raw (no softmax or sigmoid).

Mean pooling is order-invariant: two sentences with the same token multiset
get the same embedding.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ShapeError

logger = logging.getLogger(__name__)

HEAD_WIDTH = 128
PARAM_NAMES = (
    "embedding",
    "enc_w1", "enc_b1", "enc_w2", "enc_b2",
    "head_w1", "head_b1", "head_w2", "head_b2",
)

_TOKEN_RE = re.compile(r"\w+")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 18)
def _tokenize(text, bucket_count, lowercase):
    if lowercase:
        text = text.lower()
    return tuple(fnv1a_64(tok.encode("utf-8")) % bucket_count for tok in _TOKEN_RE.findall(text))


@dataclass(frozen=True)
class Tokenizer:
    """Splits on whitespace and punctuation, hashes each token into a bucket."""

    bucket_count: int = 1 << 14
    lowercase: bool = True

    def __post_init__(self):
        if self.bucket_count < 1:
            raise ValueError("bucket_count must be positive")

    def tokenize(self, text: str) -> list[int]:
        return list(_tokenize(text, self.bucket_count, self.lowercase))


def match_features(u, v):
    """``[u; v; |u - v|; u * v]`` along the last axis."""
    u, v = T.as_tensor(u), T.as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError("match_features", f"embedding shapes differ: {u.shape} vs {v.shape}")
    return T.concat([u, v, T.abs(u - v), u * v], axis=-1)


def _glorot(rng, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class DualEncoderModel:
    """Shared sentence encoder plus classification head producing ``C`` scores."""

    def __init__(self, num_classes, tokenizer=None, d_emb=64, d_enc=64, seed=0, params=None):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = int(num_classes)
        self.tokenizer = tokenizer or Tokenizer()
        self.d_emb = int(d_emb)
        self.d_enc = int(d_enc)
        self.params = self._init_params(seed) if params is None else dict(params)
        self._check_shapes()

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        V, e, d, C = self.tokenizer.bucket_count, self.d_emb, self.d_enc, self.num_classes
        return {
            "embedding": _glorot(rng, V, e),
            "enc_w1": _glorot(rng, e, d),
            "enc_b1": np.zeros(d),
            "enc_w2": _glorot(rng, d, d),
            "enc_b2": np.zeros(d),
            "head_w1": _glorot(rng, 4 * d, HEAD_WIDTH),
            "head_b1": np.zeros(HEAD_WIDTH),
            "head_w2": _glorot(rng, HEAD_WIDTH, C),
            "head_b2": np.zeros(C),
        }

    def param_shapes(self):
        V, e, d, C = self.tokenizer.bucket_count, self.d_emb, self.d_enc, self.num_classes
        return {
            "embedding": (V, e),
            "enc_w1": (e, d), "enc_b1": (d,),
            "enc_w2": (d, d), "enc_b2": (d,),
            "head_w1": (4 * d, HEAD_WIDTH), "head_b1": (HEAD_WIDTH,),
            "head_w2": (HEAD_WIDTH, C), "head_b2": (C,),
        }

    def _check_shapes(self):
        expected = self.param_shapes()
        if set(self.params) != set(expected):
            raise ShapeError("DualEncoderModel", f"parameter names {sorted(self.params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            self.params[name] = np.asarray(self.params[name], dtype=np.float64)
            if self.params[name].shape != shape:
                raise ShapeError("DualEncoderModel", f"{name} has shape {self.params[name].shape}, expected {shape}")

    def leaves(self, trainable=False):
        return {k: T.Tensor(v, requires_grad=trainable, name=k) for k, v in self.params.items()}

    def copy(self):
        return DualEncoderModel(self.num_classes, self.tokenizer, self.d_emb, self.d_enc,
                                params={k: v.copy() for k, v in self.params.items()})

    # -- encoding ------------------------------------------------------------

    def pooling_matrix(self, token_lists):
        """Sparse ``n x bucket_count`` matrix whose rows average token embeddings."""
        indptr, cols, vals = [0], [], []
        for i, ids in enumerate(token_lists):
            if not ids:
                logger.warning("empty sentence at position %d; using a zero pooled vector", i)
            cols.extend(ids)
            vals.extend([1.0 / len(ids)] * len(ids) if ids else [])
            indptr.append(len(cols))
        shape = (len(token_lists), self.tokenizer.bucket_count)
        # duplicate ids in a row are summed by the matrix product, as averaging needs
        return sp.csr_matrix((np.array(vals), np.array(cols, dtype=np.int64), np.array(indptr)), shape=shape)

    def encode_batch(self, token_lists, leaves=None):
        """Sentence embeddings ``g(x)`` for a list of token-id lists, shape ``n x d_enc``."""
        p = leaves if leaves is not None else self.leaves()
        pooled = T.sparse_matmul(self.pooling_matrix(token_lists), p["embedding"])
        hidden = T.elu(pooled @ p["enc_w1"] + p["enc_b1"])
        return hidden @ p["enc_w2"] + p["enc_b2"]

    def encode(self, token_ids, leaves=None):
        return self.encode_batch([list(token_ids)], leaves)[0]

    def embed_texts(self, texts):
        """Numpy embeddings for raw sentences."""
        if not texts:
            return np.zeros((0, self.d_enc))
        return self.encode_batch([self.tokenizer.tokenize(t) for t in texts]).data

    # -- scoring ---------------------------------------------------------------

    def head(self, u, v, leaves=None):
        p = leaves if leaves is not None else self.leaves()
        hidden = T.elu(match_features(u, v) @ p["head_w1"] + p["head_b1"])
        return hidden @ p["head_w2"] + p["head_b2"]

    def scores(self, pairs, leaves=None):
        """Scores ``f(x)`` for a list of pairs, shape ``n x C``.

        ``pairs`` holds objects with ``premise``/``hypothesis`` attributes or
        plain ``(premise, hypothesis)`` tuples.
        """
        p = leaves if leaves is not None else self.leaves()
        left, right = [], []
        for pair in pairs:
            a, b = (pair.premise, pair.hypothesis) if hasattr(pair, "premise") else pair
            left.append(self.tokenizer.tokenize(a))
            right.append(self.tokenizer.tokenize(b))
        u = self.encode_batch(left, p)
        v = self.encode_batch(right, p)
        return self.head(u, v, p)

    def forward(self, pair, leaves=None):
        return self.scores([pair], leaves)[0]

    def predict(self, pairs, batch_size=2048):
        """Argmax class index per pair (``C == 1``: 1 if the score is positive)."""
        out = []
        for i in range(0, len(pairs), batch_size):
            s = self.scores(pairs[i:i + batch_size]).data
            out.append((s[:, 0] > 0).astype(int) if self.num_classes == 1 else s.argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)
