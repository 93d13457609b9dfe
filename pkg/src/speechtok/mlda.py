"""Multi-layer dynamic attention.

Text embeddings query the last encoder layer; the values are a per-frame
softmax mixture of several encoder layers whose weights come from a small MLP
applied to the last layer. Everything is written against plain numpy arrays
with explicit backward passes so the toy trainer can use exact gradients.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.signal import lfilter

from . import tensorfile
from .numerics import ShapeError, as_mat, softmax_rows, softmax_rows_backward

DEFAULT_LAYER_IDS = (8, 16, 24, 32)
SHALLOW_LAYER_IDS = (3, 6, 9, 32)


@dataclass
class LayerStack:
    """Frame-level hidden states for a set of encoder layers.

    ``layers`` has shape (n_layers, T, d_h); the last entry provides the keys
    and the input of the mixture predictor.
    """

    layer_ids: List[int]
    layers: np.ndarray

    def __post_init__(self):
        self.layer_ids = [int(i) for i in self.layer_ids]
        self.layers = np.asarray(self.layers, dtype=np.float64)
        if self.layers.ndim != 3:
            raise ShapeError(f"layers must be (n_layers, T, d_h), got {self.layers.shape}")
        if len(self.layer_ids) != self.layers.shape[0]:
            raise ShapeError(
                f"{len(self.layer_ids)} layer ids for {self.layers.shape[0]} layers"
            )
        if len(set(self.layer_ids)) != len(self.layer_ids):
            raise ShapeError(f"duplicate layer ids {self.layer_ids}")
        if not np.all(np.isfinite(self.layers)):
            raise ValueError("layer stack contains NaN or Inf")

    @property
    def n_layers(self):
        return self.layers.shape[0]

    @property
    def T(self):
        return self.layers.shape[1]

    @property
    def d_h(self):
        return self.layers.shape[2]

    @property
    def last(self):
        return self.layers[-1]

    def save(self, path, sidecar=True):
        return tensorfile.write(path, self.layer_ids, self.layers, sidecar=sidecar)

    @classmethod
    def load(cls, path):
        ids, data = tensorfile.read(path)
        return cls(ids, data.astype(np.float64))


def synthetic_stack(T, d_h, layer_ids=DEFAULT_LAYER_IDS, seed=0):
    """Smoothed random walks, one per layer, with a layer-dependent cutoff.

    Shallow layers keep more high-frequency movement; deeper layers are
    smoother. Each feature is standardised to zero mean / unit variance.
    """
    rng = np.random.default_rng(seed)
    n = len(layer_ids)
    out = np.empty((n, T, d_h))
    for k in range(n):
        walk = np.cumsum(rng.standard_normal((T, d_h)), axis=0)
        # one-pole low-pass; pole moves toward 1 with depth
        pole = 0.2 + 0.7 * k / max(1, n - 1)
        smooth = lfilter([1.0 - pole], [1.0, -pole], walk, axis=0)
        smooth = smooth - smooth.mean(axis=0)
        std = smooth.std(axis=0)
        out[k] = smooth / np.where(std > 0, std, 1.0)
    return LayerStack(list(layer_ids), out)


@dataclass
class MixturePredictor:
    """One-hidden-layer tanh MLP mapping a frame of the last layer to layer logits."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d_h, n_layers, hidden=64, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(
            rng.uniform(-scale, scale, (d_h, hidden)),
            np.zeros(hidden),
            rng.uniform(-scale, scale, (hidden, n_layers)),
            np.zeros(n_layers),
        )

    @classmethod
    def zeros(cls, d_h, n_layers, hidden=64):
        return cls(
            np.zeros((d_h, hidden)), np.zeros(hidden),
            np.zeros((hidden, n_layers)), np.zeros(n_layers),
        )

    @property
    def hidden(self):
        return self.w1.shape[1]

    @property
    def n_layers(self):
        return self.w2.shape[1]


def mixture_logits(p, h_last):
    """Per-frame layer logits, shape (T, n_layers), plus the hidden activations."""
    h_last = as_mat(h_last, "h_last")
    if h_last.shape[1] != p.w1.shape[0]:
        raise ShapeError(
            f"h_last width {h_last.shape[1]} does not match predictor input {p.w1.shape[0]}"
        )
    hidden = np.tanh(h_last @ p.w1 + p.b1)
    return hidden @ p.w2 + p.b2, hidden


def predict_mixture_weights(p, h_last):
    """Layer mixture weights of shape (n_layers, T); every column sums to one."""
    logits, _ = mixture_logits(p, h_last)
    return softmax_rows(logits).T


def fuse_values(stack, w):
    """Frame-wise weighted sum of the value layers, shape (T, d_h)."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (stack.n_layers, stack.T):
        raise ShapeError(
            f"weights {w.shape} do not match stack ({stack.n_layers} layers, T={stack.T})"
        )
    return np.einsum("lt,ltd->td", w, stack.layers)


def attention_weights(q, k):
    q = as_mat(q, "queries")
    k = as_mat(k, "keys")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query width {q.shape[1]} != key width {k.shape[1]}")
    return softmax_rows(q @ k.T / np.sqrt(k.shape[1]))


def cross_attend(q, k, v_fused):
    """Single-head scaled dot-product attention ``softmax(qk^T/sqrt(d_k)) v``."""
    v_fused = as_mat(v_fused, "values")
    if np.shape(k)[0] != v_fused.shape[0]:
        raise ShapeError(f"{np.shape(k)[0]} keys but {v_fused.shape[0]} value frames")
    return attention_weights(q, k) @ v_fused


@dataclass
class MldaCache:
    token_ids: np.ndarray
    stack: LayerStack
    q: np.ndarray
    hidden: np.ndarray
    weights: np.ndarray  # (T, n_layers)
    fused: np.ndarray
    attn: np.ndarray
    z: np.ndarray


@dataclass
class MldaGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    embedding: np.ndarray
    layers: np.ndarray = field(repr=False)


def embed(embedding_table, token_ids):
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError("token_ids must be a non-empty 1-D sequence")
    if ids.min() < 0 or ids.max() >= embedding_table.shape[0]:
        raise IndexError(f"token id out of range for vocabulary {embedding_table.shape[0]}")
    return embedding_table[ids]


def mlda_forward(embedding_table, token_ids, stack, p, return_cache=False):
    """Text-length aggregated tokens ``z`` (N x d_h) and mixture weights (n_layers x T)."""
    q = embed(embedding_table, token_ids)
    if q.shape[1] != stack.d_h:
        raise ShapeError(f"embedding width {q.shape[1]} != key width {stack.d_h}")
    if p.n_layers != stack.n_layers:
        raise ShapeError(f"predictor has {p.n_layers} outputs for {stack.n_layers} layers")
    logits, hidden = mixture_logits(p, stack.last)
    weights = softmax_rows(logits)
    fused = fuse_values(stack, weights.T)
    attn = attention_weights(q, stack.last)
    z = attn @ fused
    if return_cache:
        cache = MldaCache(np.asarray(token_ids), stack, q, hidden, weights, fused, attn, z)
        return z, weights.T, cache
    return z, weights.T


def mlda_backward(cache, grad_z, embedding_table, p):
    """Gradients of a scalar loss given ``grad_z`` = dLoss/dz."""
    c = cache
    keys = c.stack.last
    scale = 1.0 / np.sqrt(keys.shape[1])

    grad_attn = grad_z @ c.fused.T
    grad_fused = c.attn.T @ grad_z
    grad_scores = softmax_rows_backward(c.attn, grad_attn)
    grad_q = grad_scores @ keys * scale
    grad_keys = grad_scores.T @ c.q * scale

    grad_emb = np.zeros_like(embedding_table)
    np.add.at(grad_emb, c.token_ids, grad_q)

    grad_layers = c.weights.T[:, :, None] * grad_fused[None, :, :]
    grad_weights = np.einsum("td,ltd->tl", grad_fused, c.stack.layers)
    grad_logits = softmax_rows_backward(c.weights, grad_weights)

    grad_w2 = c.hidden.T @ grad_logits
    grad_b2 = grad_logits.sum(axis=0)
    grad_pre = (grad_logits @ p.w2.T) * (1.0 - c.hidden**2)
    grad_w1 = keys.T @ grad_pre
    grad_b1 = grad_pre.sum(axis=0)

    grad_layers[-1] += grad_keys + grad_pre @ p.w1.T
    return MldaGrads(grad_w1, grad_b1, grad_w2, grad_b2, grad_emb, grad_layers)
