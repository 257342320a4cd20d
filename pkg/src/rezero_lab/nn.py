"""Layer primitives: linear, LayerNorm, scaled dot-product and multi-head
attention, feed-forward sublayer, embeddings, dropout, and the weight
initialization schemes used by the experiments.

All forwards are built from tensor ops, so they record on the active graph
and differentiate without any per-layer backward code.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Parameter, SeededRng, Tensor

INIT_SCHEMES = ("he", "he_residual", "xavier_uniform")


class LinearLayer:
    """Affine map x @ W + b with W of shape [in, out]."""

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True, name: str = "linear"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.name = name
        self.W = Parameter(T.zeros([in_dim, out_dim]), name=f"{name}.W")
        self.b = Parameter(T.zeros([out_dim]), name=f"{name}.b") if bias else None

    def parameters(self):
        return [self.W] if self.b is None else [self.W, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"linear expects [n, {self.in_dim}], got {list(x.shape)}")
        out = T.matmul(x, self.W.value)
        if self.b is not None:
            out = T.add_rowvec(out, self.b.value)
        return out


class LayerNormLayer:
    """Per-row normalization: (x - mean) / sqrt(var + eps) * gamma + beta."""

    def __init__(self, dim: int, eps: float = 1e-5, name: str = "norm"):
        if dim < 2:
            raise ConfigError("LayerNorm needs width >= 2")
        if eps <= 0:
            raise ConfigError("eps must be positive")
        self.dim = dim
        self.eps = eps
        self.name = name
        self.gamma = Parameter(T.ones([dim]), name=f"{name}.gamma")
        self.beta = Parameter(T.zeros([dim]), name=f"{name}.beta")

    def parameters(self):
        return [self.gamma, self.beta]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"layer norm expects [n, {self.dim}], got {list(x.shape)}")
        centered = T.sub_colvec(x, x.mean(axis=1))
        denom = T.sqrt(x.var(axis=1) + self.eps)
        normed = T.div_colvec(centered, denom)
        return T.add_rowvec(T.mul_rowvec(normed, self.gamma.value), self.beta.value)


def causal_mask(n: int) -> Tensor:
    """Additive mask: 0 on/below the diagonal, -1e9 above.

    -1e9 (rather than -inf) keeps intermediate tensors finite; after the
    softmax shift it underflows to an exact 0 attention weight.
    """
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -1e9
    return Tensor(m)


def attention_forward(Wq: Tensor, Wk: Tensor, Wv: Tensor, x: Tensor, mask: Tensor | None = None) -> Tensor:
    """Single-head scaled dot-product attention: softmax(Q K^T / sqrt(d)) V."""
    if x.ndim != 2:
        raise ShapeError(f"attention expects [n, d], got {list(x.shape)}")
    d = x.shape[1]
    for w in (Wq, Wk, Wv):
        if w.shape != (d, d):
            raise ShapeError(f"projection shape {list(w.shape)} != [{d}, {d}]")
    q = T.matmul(x, Wq)
    k = T.matmul(x, Wk)
    v = T.matmul(x, Wv)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d))
    if mask is not None:
        if mask.shape != (x.shape[0], x.shape[0]):
            raise ShapeError(f"mask shape {list(mask.shape)} != [{x.shape[0]}, {x.shape[0]}]")
        scores = T.add(scores, mask)
    return T.matmul(T.softmax(scores, 1), v)


class MultiHeadAttention:
    """Multi-head self attention over [n, d] with an output projection.

    Q, K, V are full-width projections split into h column slices; each head
    uses the per-head scale sqrt(d/h).
    """

    def __init__(self, dim: int, heads: int, causal: bool = False, name: str = "attn"):
        if dim % heads != 0:
            raise ConfigError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.causal = causal
        self.name = name
        self.Wq = Parameter(T.zeros([dim, dim]), name=f"{name}.Wq")
        self.Wk = Parameter(T.zeros([dim, dim]), name=f"{name}.Wk")
        self.Wv = Parameter(T.zeros([dim, dim]), name=f"{name}.Wv")
        self.Wo = Parameter(T.zeros([dim, dim]), name=f"{name}.Wo")

    def parameters(self):
        return [self.Wq, self.Wk, self.Wv, self.Wo]

    def __call__(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"attention expects [n, {self.dim}], got {list(x.shape)}")
        n = x.shape[0]
        if mask is None and self.causal:
            mask = causal_mask(n)
        q = T.matmul(x, self.Wq.value)
        k = T.matmul(x, self.Wk.value)
        v = T.matmul(x, self.Wv.value)
        dh = self.dim // self.heads
        inv_scale = 1.0 / math.sqrt(dh)
        heads = []
        for i in range(self.heads):
            lo, hi = i * dh, (i + 1) * dh
            qi = T.slice_cols(q, lo, hi)
            ki = T.slice_cols(k, lo, hi)
            vi = T.slice_cols(v, lo, hi)
            scores = T.scale(T.matmul(qi, T.transpose(ki)), inv_scale)
            if mask is not None:
                scores = T.add(scores, mask)
            heads.append(T.matmul(T.softmax(scores, 1), vi))
        mixed = heads[0] if len(heads) == 1 else T.concat_cols(heads)
        return T.matmul(mixed, self.Wo.value)


class FeedForward:
    """Position-wise feed-forward: linear, gelu, linear."""

    def __init__(self, dim: int, hidden_dim: int, name: str = "ffn"):
        self.dim = dim
        self.hidden_dim = hidden_dim
        self.name = name
        self.lin1 = LinearLayer(dim, hidden_dim, name=f"{name}.lin1")
        self.lin2 = LinearLayer(hidden_dim, dim, name=f"{name}.lin2")

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.gelu(self.lin1(x)))


class EmbeddingTable:
    """Token table plus learned positional table; lookup yields [n, d]."""

    def __init__(self, vocab: int, dim: int, context: int, name: str = "embed"):
        self.vocab = vocab
        self.dim = dim
        self.context = context
        self.name = name
        self.tokens = Parameter(T.zeros([vocab, dim]), name=f"{name}.tokens")
        self.positions = Parameter(T.zeros([context, dim]), name=f"{name}.positions")

    def parameters(self):
        return [self.tokens, self.positions]

    def __call__(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.intp)
        if ids.ndim != 1:
            raise ShapeError("embedding lookup expects a 1-d token id list")
        if ids.size > self.context:
            raise ShapeError(f"sequence length {ids.size} exceeds context {self.context}")
        tok = T.take_rows(self.tokens.value, ids)
        pos = T.take_rows(self.positions.value, np.arange(ids.size))
        return T.add(tok, pos)


class DropoutLayer:
    """Inverted dropout; identity in eval mode."""

    def __init__(self, rate: float):
        if not (0.0 <= rate < 1.0):
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.training = True

    def parameters(self):
        return []

    def __call__(self, x: Tensor, rng: SeededRng | None = None) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng")
        keep = (rng.uniform(0.0, 1.0, x.shape) >= self.rate) / (1.0 - self.rate)
        return T.mul(x, Tensor(keep))


def init_weights(layer, scheme: str, rng: SeededRng) -> None:
    """Initialize a layer in place.

    he: normal(0, sqrt(2/fan_in)); he_residual: normal(0, sqrt(0.25/fan_in));
    xavier_uniform: uniform(+-sqrt(6/(fan_in+fan_out))). Biases zero,
    LayerNorm gets gamma=1, beta=0, embeddings normal(0, 0.02).
    """
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    if isinstance(layer, LinearLayer):
        layer.W.value = _draw_matrix(layer.in_dim, layer.out_dim, scheme, rng)
        if layer.b is not None:
            layer.b.value = T.zeros([layer.out_dim])
    elif isinstance(layer, LayerNormLayer):
        layer.gamma.value = T.ones([layer.dim])
        layer.beta.value = T.zeros([layer.dim])
    elif isinstance(layer, MultiHeadAttention):
        for p in (layer.Wq, layer.Wk, layer.Wv, layer.Wo):
            p.value = _draw_matrix(layer.dim, layer.dim, scheme, rng)
    elif isinstance(layer, FeedForward):
        init_weights(layer.lin1, scheme, rng)
        init_weights(layer.lin2, scheme, rng)
    elif isinstance(layer, EmbeddingTable):
        layer.tokens.value = T.normal([layer.vocab, layer.dim], 0.0, 0.02, rng)
        layer.positions.value = T.normal([layer.context, layer.dim], 0.0, 0.02, rng)
    elif isinstance(layer, DropoutLayer):
        pass
    else:
        raise ConfigError(f"cannot initialize layer of type {type(layer).__name__}")


def _draw_matrix(fan_in: int, fan_out: int, scheme: str, rng: SeededRng) -> Tensor:
    if scheme == "he":
        return T.normal([fan_in, fan_out], 0.0, math.sqrt(2.0 / fan_in), rng)
    if scheme == "he_residual":
        return T.normal([fan_in, fan_out], 0.0, math.sqrt(0.25 / fan_in), rng)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return T.uniform([fan_in, fan_out], -limit, limit, rng)
