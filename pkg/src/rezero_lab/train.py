"""Deterministic training loops with full run logging.

A RunLog records the per-iteration loss and learning rate, a per-epoch
snapshot of every |residual weight|, the config that produced the run, and a
divergence flag. Identical configs (seed included) produce bit-identical
logs.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as D
from . import models, optim
from . import residual as R
from . import tensor as T
from .errors import ConfigError
from .tensor import Graph, SeededRng, Tensor

DIVERGENCE_LOSS = 1e6


def cross_entropy(logits: Tensor, target_ids) -> Tensor:
    """Mean cross entropy of rows of logits against integer targets.

    Stabilized by a constant row-max shift, which cancels in the
    logsumexp-minus-pick form and so needs no gradient of its own.
    """
    shift = logits.data.max(axis=1)
    shifted = T.sub_colvec(logits, Tensor(shift))
    lse = T.log(T.exp(shifted).sum(axis=1))
    picked = T.gather_cols(shifted, np.asarray(target_ids, dtype=np.intp))
    return T.sub(lse, picked).mean()


@dataclass
class TrainConfig:
    model: str = "fc"              # fc | transformer-decoder
    depth: int = 8
    width: int = 32
    variant: str = "ReZero"
    alpha0: float = 0.0
    skipinit_s0: float = 0.0
    highway_bias0: float = -2.0
    fixup_m: int = 2
    dataset: str = "blobs"         # blobs | spirals | corpus
    samples: int = 128             # per class (classification)
    batch_size: int = 32
    optimizer: str = "adagrad"     # adagrad | sgd
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    schedule: str = "constant"     # constant | linear_warmup | step_down | one_cycle
    warmup_steps: int = 100
    iterations: int = 200
    epoch_iters: int = 0           # 0: auto (dataset pass, or 50 for the LM)
    seed: int = 1234
    loss_threshold: float = 0.0    # 0: no early report
    residual_lr: float = 0.0       # 0: no residual-weight override
    heads: int = 2
    context: int = 32
    d_ff: int = 0                  # 0: 4*width
    dropout: float = 0.0
    classes: int = 2

    def variant_obj(self) -> R.Variant:
        return R.variant(self.variant, alpha0=self.alpha0,
                         skipinit_s0=self.skipinit_s0,
                         highway_bias0=self.highway_bias0,
                         fixup_m=self.fixup_m)


@dataclass
class RunLog:
    config: dict
    seed: int
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    alpha_rows: list = field(default_factory=list)  # per-epoch |alpha_i| snapshots
    diverged: bool = False
    final_metrics: dict = field(default_factory=dict)
    model: object = None  # populated only with train(keep_model=True); never exported


def _make_schedule(cfg: TrainConfig):
    if cfg.schedule == "constant":
        return optim.ConstantSchedule(cfg.lr)
    if cfg.schedule == "linear_warmup":
        return optim.LinearWarmup(cfg.warmup_steps, cfg.lr)
    if cfg.schedule == "step_down":
        return optim.StepDown(base=cfg.lr)
    if cfg.schedule == "one_cycle":
        return optim.OneCycle()
    raise ConfigError(f"unknown schedule {cfg.schedule!r}")


def _snapshot_alphas(stack, log: RunLog):
    if stack.alpha_parameters():
        log.alpha_rows.append(R.residual_weights(stack))


def train(cfg: TrainConfig, keep_model: bool = False) -> RunLog:
    """Run one training job to its iteration cap (or divergence)."""
    rng = SeededRng(cfg.seed)
    variant = cfg.variant_obj()
    log = RunLog(config=asdict(cfg), seed=cfg.seed)

    overrides = {"residual-weight": cfg.residual_lr} if cfg.residual_lr else None
    opt = optim.make_optimizer(cfg.optimizer, lr_overrides=overrides,
                               momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    schedule = _make_schedule(cfg)

    if cfg.model == "fc":
        run_fn = _train_classifier
    elif cfg.model == "transformer-decoder":
        run_fn = _train_lm
    else:
        raise ConfigError(f"unknown model {cfg.model!r}")
    model = run_fn(cfg, variant, rng, opt, schedule, log)
    if keep_model:
        log.model = model

    if log.losses:
        window = log.losses[-min(10, len(log.losses)):]
        log.final_metrics["final_loss"] = float(np.mean(window))
        log.final_metrics["bits_per_token"] = float(np.mean(window)) / math.log(2.0)
    log.final_metrics["iterations_run"] = len(log.losses)
    return log


def _train_classifier(cfg, variant, rng, opt, schedule, log):
    x, y = D.make_dataset(cfg.dataset, cfg.samples, rng.child("data"))
    log.config["dataset_hash"] = f"{zlib.crc32(x.tobytes() + y.tobytes()):08x}"
    model = models.build_model("fc", variant=variant, depth=cfg.depth,
                               width=cfg.width, rng=rng.child("init"),
                               in_dim=x.shape[1], classes=cfg.classes)
    params = model.parameters()
    epoch_iters = cfg.epoch_iters or max(1, math.ceil(x.shape[0] / cfg.batch_size))
    batch_rng = rng.child("batches")
    _snapshot_alphas(model.stack, log)

    t = 0
    while t < cfg.iterations:
        for bx, by in D.classification_batches(x, y, cfg.batch_size, batch_rng):
            if t >= cfg.iterations:
                break
            lr, mom = schedule.at(t, cfg.iterations)
            with Graph() as g:
                loss = cross_entropy(model(Tensor(bx)), by)
            value = loss.item()
            if not math.isfinite(value) or value > DIVERGENCE_LOSS:
                log.diverged = True
                return model
            g.backward(loss, params)
            if opt.step(params, lr, momentum=mom):
                log.diverged = True
                return model
            log.losses.append(value)
            log.lrs.append(lr)
            t += 1
            if t % epoch_iters == 0:
                _snapshot_alphas(model.stack, log)
    if len(log.losses) % epoch_iters != 0:
        _snapshot_alphas(model.stack, log)
    return model


def _train_lm(cfg, variant, rng, opt, schedule, log):
    corpus = D.load_corpus()
    vocab = D.CharVocab(corpus)
    encoded = vocab.encode(corpus)
    log.config["dataset_hash"] = f"{zlib.crc32(corpus.encode('utf8')):08x}"
    model = models.build_model("transformer-decoder", variant=variant,
                               depth=cfg.depth, width=cfg.width,
                               rng=rng.child("init"), vocab=len(vocab),
                               context=cfg.context, heads=cfg.heads,
                               d_ff=cfg.d_ff or None, dropout=cfg.dropout)
    model.set_training(True)
    params = model.parameters()
    epoch_iters = cfg.epoch_iters or 50
    batch_rng = rng.child("batches")
    _snapshot_alphas(model.stack, log)

    for t in range(cfg.iterations):
        xs, ys = D.lm_windows(encoded, cfg.context, cfg.batch_size, batch_rng)
        lr, mom = schedule.at(t, cfg.iterations)
        with Graph() as g:
            total = None
            for seq, target in zip(xs, ys):
                piece = cross_entropy(model(seq), target)
                total = piece if total is None else T.add(total, piece)
            loss = T.scale(total, 1.0 / len(xs))
        value = loss.item()
        if not math.isfinite(value) or value > DIVERGENCE_LOSS:
            log.diverged = True
            return model
        g.backward(loss, params)
        if opt.step(params, lr, momentum=mom):
            log.diverged = True
            return model
        log.losses.append(value)
        log.lrs.append(lr)
        if (t + 1) % epoch_iters == 0:
            _snapshot_alphas(model.stack, log)
    if len(log.losses) % epoch_iters != 0:
        _snapshot_alphas(model.stack, log)
    return model


def iterations_to_threshold(losses, threshold: float, window: int = 10):
    """First iteration whose trailing-mean loss is at or below threshold.

    Returns None when the threshold is never reached. The mean runs over the
    last `window` recorded losses (fewer at the start of the trace).
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    losses = list(losses)
    for t in range(len(losses)):
        lo = max(0, t - window + 1)
        if float(np.mean(losses[lo:t + 1])) <= threshold:
            return t
    return None
