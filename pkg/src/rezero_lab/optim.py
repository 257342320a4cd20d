"""Optimizers and learning-rate schedules for the training experiments.

Both optimizers support a per-group learning-rate override keyed by the
parameter group tag, used to clamp the residual-weight rate during the
one-cycle (superconvergence) recipe.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .errors import ConfigError, ContractError


class Sgd:
    """v <- mu*v + g + wd*theta; theta <- theta - lr*v."""

    def __init__(self, momentum: float = 0.0, weight_decay: float = 0.0,
                 group_lr: dict | None = None):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.group_lr = dict(group_lr or {})
        self._velocity = {}

    def step(self, params, lr: float, momentum: float | None = None) -> bool:
        """Apply one update; returns True (and skips the step) on NaN gradients."""
        grads = [p.grad.data for p in params]
        if any(not np.all(np.isfinite(g)) for g in grads):
            return True
        mu = self.momentum if momentum is None else momentum
        for p, g in zip(params, grads):
            update = g
            if self.weight_decay:
                update = update + self.weight_decay * p.value.data
            v = self._velocity.get(id(p))
            if mu:
                v = update if v is None else mu * v + update
                self._velocity[id(p)] = v
                update = v
            step_lr = self.group_lr.get(p.group, lr)
            p.value = type(p.value)(p.value.data - step_lr * update)
        return False


class Adagrad:
    """G <- G + g^2; theta <- theta - lr*g/(sqrt(G) + eps)."""

    def __init__(self, eps: float = 1e-10, group_lr: dict | None = None):
        if eps <= 0:
            raise ConfigError("adagrad eps must be positive")
        self.eps = eps
        self.group_lr = dict(group_lr or {})
        self._accum = {}

    def step(self, params, lr: float, momentum: float | None = None) -> bool:
        grads = [p.grad.data for p in params]
        if any(not np.all(np.isfinite(g)) for g in grads):
            return True
        for p, g in zip(params, grads):
            G = self._accum.get(id(p))
            G = g * g if G is None else G + g * g
            self._accum[id(p)] = G
            step_lr = self.group_lr.get(p.group, lr)
            p.value = type(p.value)(p.value.data - step_lr * g / (np.sqrt(G) + self.eps))
        return False


def make_optimizer(kind: str, lr_overrides: dict | None = None, momentum: float = 0.0,
                   weight_decay: float = 0.0, adagrad_eps: float = 1e-10):
    if kind == "sgd":
        return Sgd(momentum=momentum, weight_decay=weight_decay, group_lr=lr_overrides)
    if kind == "adagrad":
        return Adagrad(eps=adagrad_eps, group_lr=lr_overrides)
    raise ConfigError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# schedules: at(t, total) -> (lr, momentum or None)


def _check_t(t, total):
    if not (0 <= t <= total):
        raise ContractError(f"step {t} outside [0, {total}]")


def _lerp(a: float, b: float, s: float) -> float:
    # convex combination; s=0 and s=1 return the endpoints bit-exactly
    return a * (1.0 - s) + b * s


@dataclass(frozen=True)
class ConstantSchedule:
    value: float

    def at(self, t: int, total: int):
        _check_t(t, total)
        return self.value, None


@dataclass(frozen=True)
class LinearWarmup:
    """Linear ramp from 0 to peak over the first `steps` iterations."""

    steps: int
    peak: float

    def at(self, t: int, total: int):
        _check_t(t, total)
        if t >= self.steps:
            return self.peak, None
        return self.peak * (t / self.steps), None


@dataclass(frozen=True)
class StepDown:
    """Piecewise-constant decay: divide by 1/factor at each drop epoch.

    Rates are precomputed in decimal so base 0.1 with factor 0.1 lands on
    exactly 0.01 and 0.001 (float(0.1)*float(0.1) would not).
    """

    base: float = 0.1
    drops: tuple = (100, 150)
    factor: float = 0.1

    def at(self, t: int, total: int):
        _check_t(t, total)
        k = sum(1 for d in self.drops if t >= d)
        rate = float(Decimal(str(self.base)) * Decimal(str(self.factor)) ** k)
        return rate, None


@dataclass(frozen=True)
class OneCycle:
    """Triangular ramp with a final decay tail; momentum mirrors the triangle."""

    lr_lo: float = 0.032
    lr_hi: float = 1.2
    lr_final: float = 0.001
    up_frac: float = 0.1
    down_frac: float = 0.9
    momentum_hi: float = 0.95
    momentum_lo: float = 0.85

    def __post_init__(self):
        if not (0.0 < self.up_frac < self.down_frac < 1.0):
            raise ConfigError("need 0 < up_frac < down_frac < 1")
        for v in (self.lr_lo, self.lr_hi, self.lr_final):
            if v <= 0:
                raise ConfigError("one-cycle rates must be positive")

    def at(self, t: int, total: int):
        _check_t(t, total)
        t1 = int(round(self.up_frac * total))
        t2 = int(round(self.down_frac * total))
        if t <= t1:
            s = t / t1 if t1 else 1.0
            return _lerp(self.lr_lo, self.lr_hi, s), _lerp(self.momentum_hi, self.momentum_lo, s)
        if t <= t2:
            s = (t - t1) / (t2 - t1)
            return _lerp(self.lr_hi, self.lr_lo, s), _lerp(self.momentum_lo, self.momentum_hi, s)
        s = (t - t2) / (total - t2) if total > t2 else 1.0
        return _lerp(self.lr_lo, self.lr_final, s), self.momentum_hi


def lr_schedule(schedule, t: int, total: int):
    """(lr, momentum-or-None) at step t of a run with `total` steps."""
    return schedule.at(t, total)
