"""Closed-form single-neuron depth-L model.

Every layer shares one weight w and one residual weight alpha, so the network
maps x0 to (1 + alpha*w)^L * x0 and gradient descent dynamics are available
in closed form. The loss is the training-set mean of 0.5*(x_L - target*x0)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# training inputs used by the contour/trajectory figures
DEFAULT_INPUTS = (1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8)
DIVERGENCE_LIMIT = 1e15
LOG_NORM_FLOOR = -12.0
LOG_NORM_CEIL = math.log10(np.finfo(np.float64).max)


@dataclass
class ToyConfig:
    depth: int = 5
    inputs: tuple = DEFAULT_INPUTS
    target: float = 50.0
    lr: float = 1e-3
    steps: int = 10_000
    w0: float = 1.0
    alpha0: float = 0.0
    train_alpha: bool = True  # False freezes alpha (fixed-gate baseline)

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not self.inputs:
            raise ConfigError("need at least one training input")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def _pow(base: float, k: int) -> float:
    # python float ** raises OverflowError instead of returning inf
    try:
        return base ** k
    except OverflowError:
        return math.inf if base > 0 or k % 2 == 0 else -math.inf


def toy_forward(w: float, alpha: float, depth: int, x0: float) -> float:
    return _pow(1.0 + alpha * w, depth) * x0


def toy_loss(w: float, alpha: float, cfg: ToyConfig) -> float:
    total = 0.0
    for x0 in cfg.inputs:
        r = toy_forward(w, alpha, cfg.depth, x0) - cfg.target * x0
        try:
            total += 0.5 * r * r
        except OverflowError:
            return math.inf
    return total / len(cfg.inputs)


def toy_grads(w: float, alpha: float, cfg: ToyConfig) -> tuple:
    """Analytic (dC/dw, dC/dalpha), averaged over the training set.

    Both gradients share the factor L*x0*(1+alpha*w)^(L-1)*(x_L - t*x0);
    w picks up a leading alpha and alpha a leading w.
    """
    L = cfg.depth
    gw = 0.0
    ga = 0.0
    base = 1.0 + alpha * w
    for x0 in cfg.inputs:
        xl = _pow(base, L) * x0
        try:
            common = L * x0 * _pow(base, L - 1) * (xl - cfg.target * x0)
        except OverflowError:
            common = math.inf
        gw += alpha * common
        ga += w * common
    n = len(cfg.inputs)
    return gw / n, ga / n


@dataclass
class TrajectoryPoint:
    step: int
    w: float
    alpha: float
    loss: float


@dataclass
class ToyRun:
    points: list
    diverged: bool = False

    @property
    def final(self) -> TrajectoryPoint:
        return self.points[-1]


def _diverged(w: float, alpha: float, cfg: ToyConfig) -> bool:
    if not (math.isfinite(w) and math.isfinite(alpha)):
        return True
    base = 1.0 + alpha * w
    for x0 in cfg.inputs:
        xl = _pow(base, cfg.depth) * x0
        if not math.isfinite(xl) or abs(xl) > DIVERGENCE_LIMIT:
            return True
    return False


def toy_gd(cfg: ToyConfig) -> ToyRun:
    """Plain gradient descent with simultaneous (w, alpha) updates.

    The trajectory records every step; it is truncated with a divergence
    flag once any training output exceeds the divergence limit.
    """
    w, alpha = cfg.w0, cfg.alpha0
    points = [TrajectoryPoint(0, w, alpha, toy_loss(w, alpha, cfg))]
    for step in range(1, cfg.steps + 1):
        gw, ga = toy_grads(w, alpha, cfg)
        w = w - cfg.lr * gw
        if cfg.train_alpha:
            alpha = alpha - cfg.lr * ga
        if _diverged(w, alpha, cfg):
            return ToyRun(points, diverged=True)
        points.append(TrajectoryPoint(step, w, alpha, toy_loss(w, alpha, cfg)))
    return ToyRun(points, diverged=False)


@dataclass
class ContourGrid:
    """log10 gradient norms over a (w, alpha) grid; matrix[i, j] sits at
    (w_values[i], alpha_values[j])."""

    w_values: np.ndarray
    alpha_values: np.ndarray
    log_norms: np.ndarray
    clamped: np.ndarray = field(repr=False)  # bool mask of floored/ceiled entries


def grad_norm_grid(w_range: tuple, alpha_range: tuple, samples: tuple, cfg: ToyConfig) -> ContourGrid:
    """log10 of the 2-norm of (dC/dw, dC/dalpha) at every grid point.

    Zero norms clamp to the floor (-12); overflowing norms clamp to the
    float64 ceiling. Both cases are flagged in the clamp mask.
    """
    nw, na = samples
    if nw < 2 or na < 2:
        raise ConfigError("need at least 2 samples per axis")
    w_values = np.linspace(w_range[0], w_range[1], nw)
    alpha_values = np.linspace(alpha_range[0], alpha_range[1], na)
    logs = np.empty((nw, na))
    clamped = np.zeros((nw, na), dtype=bool)
    for i, w in enumerate(w_values):
        for j, alpha in enumerate(alpha_values):
            with np.errstate(over="ignore", invalid="ignore"):
                gw, ga = toy_grads(float(w), float(alpha), cfg)
                norm = math.hypot(gw, ga) if (math.isfinite(gw) and math.isfinite(ga)) else math.inf
            if norm == 0.0 or (math.isfinite(norm) and math.log10(norm) < LOG_NORM_FLOOR):
                logs[i, j] = LOG_NORM_FLOOR
                clamped[i, j] = True
            elif not math.isfinite(norm):
                logs[i, j] = LOG_NORM_CEIL
                clamped[i, j] = True
            else:
                logs[i, j] = math.log10(norm)
    return ContourGrid(w_values, alpha_values, logs, clamped)
