"""Model builders: a width-preserving fully-connected classifier and a
character-level transformer decoder, both assembled from wrapped blocks so
every signal-propagation variant plugs into either body.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import residual as R
from . import tensor as T
from .errors import ConfigError
from .tensor import SeededRng, Tensor


class FcClassifier:
    """Input lift, a stack of wrapped width-preserving blocks, and a readout."""

    def __init__(self, in_dim: int, width: int, depth: int, classes: int,
                 variant: R.Variant, rng: SeededRng, scheme: str | None = None):
        branch_layers = 2 if variant.kind == "FixUp" else 1
        cfg = R.StackConfig(depth=depth, width=width, variant=variant,
                            branch_layers=branch_layers, scheme=scheme)
        self.variant = variant
        self.input_proj = nn.LinearLayer(in_dim, width, name="input_proj")
        self.stack = R.build_fc_stack(cfg, rng)
        self.readout = nn.LinearLayer(width, classes, name="readout")
        used_scheme = scheme or R.default_scheme(variant)
        nn.init_weights(self.input_proj, used_scheme, rng)
        if variant.kind == "FixUp":
            # FixUp zero-initializes the classification layer
            self.readout.W.value = T.zeros([width, classes])
        else:
            nn.init_weights(self.readout, used_scheme, rng)

    def parameters(self):
        return (self.input_proj.parameters() + self.stack.parameters()
                + self.readout.parameters())

    def trunk(self, x: Tensor) -> Tensor:
        """Pre-readout activations (the block stack applied to the lifted input)."""
        return self.stack(self.input_proj(x))

    def __call__(self, x: Tensor) -> Tensor:
        return self.readout(self.trunk(x))


class SublayerBranch:
    """Attention or feed-forward core with trailing dropout."""

    def __init__(self, core, dropout: nn.DropoutLayer, rng: SeededRng):
        self.core = core
        self.dropout = dropout
        self._rng = rng

    def parameters(self):
        return self.core.parameters()

    def init(self, scheme: str, rng: SeededRng):
        nn.init_weights(self.core, scheme, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.dropout(self.core(x), self._rng)


def build_transformer_stack(depth: int, width: int, heads: int, variant: R.Variant,
                            rng: SeededRng, causal: bool = False,
                            d_ff: int | None = None, dropout: float = 0.0,
                            scheme: str = "xavier_uniform",
                            shared_alpha: str = "per-layer-pair") -> R.BlockStack:
    """2*depth wrapped sublayer blocks: (attention, feed-forward) per layer.

    With the per-layer-pair policy both sublayers of a layer share one
    residual weight.
    """
    if variant.kind == "FixUp":
        raise ConfigError("FixUp branches are realized on the fully-connected body only")
    d_ff = 4 * width if d_ff is None else d_ff
    drop_rng = rng.child("dropout")
    blocks = []
    for i in range(depth):
        attn = SublayerBranch(nn.MultiHeadAttention(width, heads, causal=causal,
                                                    name=f"layer{i}.attn"),
                              nn.DropoutLayer(dropout), drop_rng)
        ffn = SublayerBranch(nn.FeedForward(width, d_ff, name=f"layer{i}.ffn"),
                             nn.DropoutLayer(dropout), drop_rng)
        attn_block = R.make_block(attn, variant, width, name=f"layer{i}.attn")
        share = attn_block.alpha if (shared_alpha == "per-layer-pair"
                                     and variant.kind in R.ALPHA_KINDS) else None
        ffn_block = R.make_block(ffn, variant, width, alpha_param=share,
                                 name=f"layer{i}.ffn")
        blocks.extend([attn_block, ffn_block])
    stack_cfg = R.StackConfig(depth=2 * depth, width=width, variant=variant,
                              shared_alpha=shared_alpha, scheme=scheme)
    R.init_stack(blocks, stack_cfg, rng)
    return R.BlockStack(blocks)


class TransformerLm:
    """Character-level decoder: embeddings, wrapped sublayer stack, readout."""

    def __init__(self, vocab: int, context: int, width: int, depth: int, heads: int,
                 variant: R.Variant, rng: SeededRng, d_ff: int | None = None,
                 dropout: float = 0.0, scheme: str = "xavier_uniform"):
        self.vocab = vocab
        self.context = context
        self.width = width
        self.depth = depth
        self.variant = variant
        self.embed = nn.EmbeddingTable(vocab, width, context)
        self.stack = build_transformer_stack(depth, width, heads, variant, rng,
                                             causal=True, d_ff=d_ff, dropout=dropout,
                                             scheme=scheme)
        self.readout = nn.LinearLayer(width, vocab, name="readout")
        nn.init_weights(self.embed, scheme, rng)
        nn.init_weights(self.readout, scheme, rng)

    def parameters(self):
        return (self.embed.parameters() + self.stack.parameters()
                + self.readout.parameters())

    def set_training(self, training: bool):
        for block in self.stack.blocks:
            block.inner.dropout.training = training

    def __call__(self, token_ids) -> Tensor:
        return self.readout(self.stack(self.embed(token_ids)))


def build_model(kind: str, *, variant: R.Variant, depth: int, width: int,
                rng: SeededRng, in_dim: int = 2, classes: int = 2,
                vocab: int = 0, context: int = 64, heads: int = 2,
                d_ff: int | None = None, dropout: float = 0.0,
                scheme: str | None = None):
    """Model factory for the two experiment bodies."""
    if kind == "fc":
        return FcClassifier(in_dim, width, depth, classes, variant, rng, scheme=scheme)
    if kind == "transformer-decoder":
        if vocab < 2:
            raise ConfigError("transformer-decoder needs a vocabulary")
        return TransformerLm(vocab, context, width, depth, heads, variant, rng,
                             d_ff=d_ff, dropout=dropout,
                             scheme=scheme or "xavier_uniform")
    raise ConfigError(f"unknown model kind {kind!r}")
