"""Residual gating zoo: a uniform wrapper that turns any width-preserving
block F into one of the signal-propagation variants, plus stack-level
initializers.

Forward rules (x is the block input, F the wrapped transformation):

    Plain          F(x)
    Residual       x + F(x)
    NormOnly       Norm(F(x))
    PreNorm        x + F(Norm(x))
    PostNorm       Norm(x + F(x))
    GPT2Norm       x + Norm(F(x))
    ReZero         x + alpha * F(x)            alpha init 0
    GatedResNet    (1-t) * x + t * F(x),       t = sigmoid(alpha), alpha init 0
    Highway        (1-T(x)) * x + T(x) * F(x), T(x) = sigmoid(x W_T + b_T)
    ZeroGamma      x + Norm(F(x))              branch-terminal norm, gamma init 0
    FixUp          x + g * F(x)                scalar multiplier g init 1,
                                               branch weights scaled by L^(-1/(2m-2)),
                                               last branch layer zeroed
    SkipInit       x + s * F(x)                s init 0
    PreActivation  x + F(x)                    activation composed first inside F
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Parameter, SeededRng, Tensor

VARIANT_NAMES = (
    "Plain", "Residual", "NormOnly", "PreNorm", "PostNorm", "GPT2Norm",
    "ReZero", "GatedResNet", "Highway", "ZeroGamma", "FixUp", "SkipInit",
    "PreActivation",
)

_CANON = {name.lower(): name for name in VARIANT_NAMES}

# variants whose gate is a single scalar residual weight
ALPHA_KINDS = ("ReZero", "GatedResNet", "SkipInit")
# variants carrying their own LayerNorm
NORM_KINDS = ("NormOnly", "PreNorm", "PostNorm", "GPT2Norm", "ZeroGamma")


@dataclass(frozen=True)
class Variant:
    """A block-wrapping rule plus its gate hyperparameters."""

    kind: str
    alpha0: float = 0.0
    skipinit_s0: float = 0.0
    highway_bias0: float = -2.0
    fixup_m: int = 2

    def __post_init__(self):
        canon = _CANON.get(self.kind.replace("-", "").replace("_", "").lower())
        if canon is None:
            raise ConfigError(f"unknown variant {self.kind!r}; expected one of {VARIANT_NAMES}")
        object.__setattr__(self, "kind", canon)


def variant(kind: str, **hyper) -> Variant:
    return Variant(kind, **hyper)


class FcBranch:
    """Width-preserving fully-connected branch: linear then ReLU.

    With activation_first=True the activation is applied before the weights,
    the composition used by the pre-activation variant.
    """

    def __init__(self, width: int, activation_first: bool = False, name: str = "branch"):
        self.width = width
        self.activation_first = activation_first
        self.lin = nn.LinearLayer(width, width, name=f"{name}.lin")

    def parameters(self):
        return self.lin.parameters()

    def init(self, scheme: str, rng: SeededRng):
        nn.init_weights(self.lin, scheme, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if self.activation_first:
            return self.lin(T.relu(x))
        return T.relu(self.lin(x))


class FixupFcBranch:
    """Two-weight-layer branch with the scalar biases FixUp prescribes:
    one before each linear and one before the activation."""

    def __init__(self, width: int, name: str = "branch"):
        self.width = width
        self.lin1 = nn.LinearLayer(width, width, bias=False, name=f"{name}.lin1")
        self.lin2 = nn.LinearLayer(width, width, bias=False, name=f"{name}.lin2")
        self.biases = [Parameter(Tensor(0.0), name=f"{name}.bias{i}") for i in range(3)]

    @property
    def fixup_linears(self):
        return [self.lin1, self.lin2]

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters() + self.biases

    def init(self, scheme: str, rng: SeededRng):
        nn.init_weights(self.lin1, scheme, rng)
        nn.init_weights(self.lin2, scheme, rng)
        for b in self.biases:
            b.value = Tensor(0.0)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.lin1(T.add(x, self.biases[0].value))
        h = T.relu(T.add(h, self.biases[1].value))
        return self.lin2(T.add(h, self.biases[2].value))


class WrappedBlock:
    """A transformation F wrapped by one signal-propagation variant."""

    def __init__(self, inner, variant: Variant, width: int,
                 alpha_param: Parameter | None = None, name: str = "block"):
        self.inner = inner
        self.variant = variant
        self.width = width
        self.name = name
        self.alpha = None
        self.norm = None
        self.multiplier = None
        self.W_T = None
        self.b_T = None

        kind = variant.kind
        if kind in ALPHA_KINDS:
            if alpha_param is not None:
                self.alpha = alpha_param
            else:
                a0 = variant.skipinit_s0 if kind == "SkipInit" else variant.alpha0
                self.alpha = Parameter(Tensor(float(a0)), group="residual-weight",
                                       name=f"{name}.alpha")
        elif alpha_param is not None:
            raise ConfigError(f"variant {kind} takes no shared residual weight")
        if kind in NORM_KINDS:
            self.norm = nn.LayerNormLayer(width, name=f"{name}.norm")
            if kind == "ZeroGamma":
                self.norm.gamma.value = T.zeros([width])
        if kind == "FixUp":
            if not hasattr(inner, "fixup_linears"):
                raise ConfigError("FixUp needs a branch exposing fixup_linears")
            self.multiplier = Parameter(Tensor(1.0), name=f"{name}.multiplier")
        if kind == "Highway":
            self.W_T = Parameter(T.zeros([width, width]), name=f"{name}.W_T")
            self.b_T = Parameter(T.constant([width], variant.highway_bias0),
                                 name=f"{name}.b_T")

    def parameters(self):
        params = list(self.inner.parameters())
        for extra in (self.alpha, self.multiplier, self.W_T, self.b_T):
            if extra is not None:
                params.append(extra)
        if self.norm is not None:
            params.extend(self.norm.parameters())
        return params

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.width:
            raise ShapeError(f"block expects [n, {self.width}], got {list(x.shape)}")
        kind = self.variant.kind
        if kind == "Plain":
            return self.inner(x)
        if kind in ("Residual", "PreActivation"):
            return T.add(x, self.inner(x))
        if kind == "NormOnly":
            return self.norm(self.inner(x))
        if kind == "PreNorm":
            return T.add(x, self.inner(self.norm(x)))
        if kind == "PostNorm":
            return self.norm(T.add(x, self.inner(x)))
        if kind in ("GPT2Norm", "ZeroGamma"):
            return T.add(x, self.norm(self.inner(x)))
        if kind in ("ReZero", "SkipInit"):
            return T.add(x, T.mul(self.inner(x), self.alpha.value))
        if kind == "FixUp":
            return T.add(x, T.mul(self.inner(x), self.multiplier.value))
        if kind == "GatedResNet":
            t = T.sigmoid(self.alpha.value)
            carry = T.add_const(T.scale(t, -1.0), 1.0)
            return T.add(T.mul(x, carry), T.mul(self.inner(x), t))
        # Highway: per-unit gates acting on the signal
        gate = T.sigmoid(T.add_rowvec(T.matmul(x, self.W_T.value), self.b_T.value))
        carry = T.add_const(T.scale(gate, -1.0), 1.0)
        return T.add(T.mul(x, carry), T.mul(self.inner(x), gate))


def make_block(inner, variant: Variant, width: int,
               alpha_param: Parameter | None = None, name: str = "block") -> WrappedBlock:
    return WrappedBlock(inner, variant, width, alpha_param=alpha_param, name=name)


def block_forward(block: WrappedBlock, x: Tensor) -> Tensor:
    return block(x)


class BlockStack:
    """Sequential stack of wrapped blocks."""

    def __init__(self, blocks):
        self.blocks = list(blocks)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    def __len__(self):
        return len(self.blocks)

    def parameters(self):
        seen, params = set(), []
        for block in self.blocks:
            for p in block.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    params.append(p)
        return params

    def alpha_parameters(self):
        seen, params = set(), []
        for block in self.blocks:
            if block.alpha is not None and id(block.alpha) not in seen:
                seen.add(id(block.alpha))
                params.append(block.alpha)
        return params


@dataclass
class StackConfig:
    """Shape and policy of a block stack."""

    depth: int
    width: int
    variant: Variant
    branch_layers: int = 1          # weight layers per branch (m)
    shared_alpha: str = "per-block"  # or "per-layer-pair"
    scheme: str | None = None        # None: he, or he_residual for Residual

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.variant.kind == "FixUp" and self.branch_layers < 2:
            raise ConfigError("FixUp needs at least 2 weight layers per branch")
        if self.shared_alpha not in ("per-block", "per-layer-pair"):
            raise ConfigError(f"unknown shared-alpha policy {self.shared_alpha!r}")


def default_scheme(variant: Variant) -> str:
    # the vanilla residual network wants the smaller 0.25/w weight variance
    return "he_residual" if variant.kind == "Residual" else "he"


def fixup_scale(depth: int, m: int) -> float:
    """FixUp branch weight rescale factor L^(-1/(2m-2))."""
    if m < 2:
        raise ConfigError("FixUp scaling needs m >= 2")
    return float(depth) ** (-1.0 / (2.0 * m - 2.0))


def init_stack(blocks, config: StackConfig, rng: SeededRng) -> None:
    """Initialize every block of a stack in place, per its variant's rules."""
    scheme = config.scheme or default_scheme(config.variant)
    kind = config.variant.kind
    depth = len(blocks)
    for block in blocks:
        if hasattr(block.inner, "init"):
            block.inner.init(scheme, rng)
        else:
            nn.init_weights(block.inner, scheme, rng)
        if block.norm is not None:
            nn.init_weights(block.norm, scheme, rng)
            if kind == "ZeroGamma":
                block.norm.gamma.value = T.zeros([block.width])
        if kind in ("ReZero", "GatedResNet"):
            block.alpha.value = Tensor(float(config.variant.alpha0))
        elif kind == "SkipInit":
            block.alpha.value = Tensor(float(config.variant.skipinit_s0))
        if kind == "Highway":
            block.W_T.value = T.normal([block.width, block.width], 0.0,
                                       np.sqrt(2.0 / block.width), rng)
            block.b_T.value = T.constant([block.width], config.variant.highway_bias0)
        if kind == "FixUp":
            block.multiplier.value = Tensor(1.0)
            factor = fixup_scale(depth, config.branch_layers)
            linears = block.inner.fixup_linears
            for lin in linears:
                lin.W.value = Tensor(lin.W.value.data * factor)
            last = linears[-1]
            last.W.value = T.zeros(list(last.W.value.shape))


def residual_weights(stack: BlockStack):
    """Current |alpha| per residual weight, in layer order."""
    params = stack.alpha_parameters()
    if not params:
        raise ContractError("stack has no residual-weight parameters")
    return [abs(p.value.item()) for p in params]


def build_fc_stack(config: StackConfig, rng: SeededRng) -> BlockStack:
    """A stack of width-preserving fully-connected blocks, initialized."""
    blocks = []
    for i in range(config.depth):
        if config.variant.kind == "FixUp":
            if config.branch_layers != 2:
                raise ConfigError("fully-connected FixUp branches have exactly 2 weight layers")
            inner = FixupFcBranch(config.width, name=f"layer{i}")
        else:
            inner = FcBranch(config.width,
                             activation_first=config.variant.kind == "PreActivation",
                             name=f"layer{i}")
        blocks.append(make_block(inner, config.variant, config.width, name=f"layer{i}"))
    init_stack(blocks, config, rng)
    return BlockStack(blocks)
