"""Command-line entry points.

Subcommands reproduce the desk-scale analogs of the study's figures:
toy-contour / toy-train (gradient-norm landscape and descent trajectories),
fc-compare (convergence-speed ordering of gating variants), deep-fc
(trainability at depth), jacobian-spectrum (singular-value spectra),
train-lm (tiny char language model), and alpha-heatmap (residual-weight
evolution export).

Config values come from defaults, then an optional `key = value` config
file, then explicit flags; REZERO_LAB_SEED overrides the seed last.
Exit codes: 0 ok, 1 usage/config, 2 numeric failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import zlib
from dataclasses import fields

import numpy as np

from . import isometry as iso
from . import models, serialize, toy
from . import residual as R
from .errors import ConfigError, ContractError, DomainError, NumericError, ShapeError
from .tensor import SeededRng, Tensor
from .train import RunLog, TrainConfig, iterations_to_threshold, train

ENV_SEED = "REZERO_LAB_SEED"
FC_COMPARE_VARIANTS = ("Plain", "Residual", "NormOnly", "ReZero")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _train_flags(sub):
    # every TrainConfig field is a flag; values are cast on merge
    sub.add_argument("--config", help="key = value config file")
    for f in fields(TrainConfig):
        sub.add_argument("--" + f.name.replace("_", "-"), default=None)


def _build_train_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(serialize.read_config_file(args.config))
    for f in fields(TrainConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    if os.environ.get(ENV_SEED):
        values["seed"] = os.environ[ENV_SEED]
    coerced = {}
    casts = {"int": int, "float": float, "str": str}
    for f in fields(TrainConfig):
        if f.name not in values:
            continue
        cast = casts.get(f.type, str)
        try:
            coerced[f.name] = cast(values[f.name])
        except ValueError as exc:
            raise ConfigError(f"bad value for {f.name}: {values[f.name]!r}") from exc
    unknown = set(values) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**coerced)


def _hash_array(*arrays) -> str:
    crc = 0
    for a in arrays:
        crc = zlib.crc32(np.ascontiguousarray(a).tobytes(), crc)
    return f"{crc:08x}"


def cmd_toy_contour(args) -> int:
    cfg = toy.ToyConfig(depth=args.depth, target=args.target)
    grid = toy.grad_norm_grid((args.w_min, args.w_max), (args.alpha_min, args.alpha_max),
                              (args.w_samples, args.alpha_samples), cfg)
    serialize.export_grid(grid, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_toy_train(args) -> int:
    cfg = toy.ToyConfig(depth=args.depth, target=args.target, lr=args.lr,
                        steps=args.steps, w0=args.w0, alpha0=args.alpha0)
    run = toy.toy_gd(cfg)
    serialize.export_trajectory(run, args.out)
    p = run.final
    print(f"wrote {args.out}: final w={p.w:.6f} alpha={p.alpha:.6f} "
          f"alpha*w={p.w * p.alpha:.6f} loss={p.loss:.3e} diverged={run.diverged}")
    return 0


def _run_and_export(cfg: TrainConfig, path: str) -> RunLog:
    log = train(cfg)
    serialize.export_runlog(log, path)
    return log


def cmd_fc_compare(args) -> int:
    base = _build_train_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    threshold = args.threshold
    summary = []
    for name in FC_COMPARE_VARIANTS:
        counts = []
        for k in range(args.seeds):
            cfg = TrainConfig(**{**base.__dict__, "model": "fc", "variant": name,
                                 "seed": base.seed + k})
            log = _run_and_export(cfg, os.path.join(args.out_dir, f"{name}_seed{k}.csv"))
            reached = iterations_to_threshold(log.losses, threshold)
            counts.append(cfg.iterations + 1 if reached is None else reached)
        summary.append((name, counts))
    lines = [f"threshold = {threshold}", f"iterations_cap = {base.iterations}"]
    for name, counts in summary:
        lines.append(f"{name}: mean = {np.mean(counts):.1f}, per-seed = {counts}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(args.out_dir, "summary.txt"), "w") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_deep_fc(args) -> int:
    cfg = _build_train_config(args)
    log = _run_and_export(cfg, args.out)
    initial = log.losses[0] if log.losses else float("nan")
    final = log.final_metrics.get("final_loss", float("nan"))
    trainable = (not log.diverged) and log.losses and final < 0.9 * initial
    print(f"depth={cfg.depth} variant={cfg.variant} initial={initial:.4f} "
          f"final={final:.4f} trainable={'yes' if trainable else 'no'}")
    return 0


def _parse_spectrum_model(spec: str):
    if "-" not in spec:
        raise ConfigError(f"model must look like <variant>-tx or <variant>-fc, got {spec!r}")
    variant_name, _, body = spec.rpartition("-")
    if body not in ("tx", "fc"):
        raise ConfigError(f"unknown model body {body!r}; expected tx or fc")
    return R.variant(variant_name), body


def cmd_jacobian_spectrum(args) -> int:
    variant_base, body = _parse_spectrum_model(args.model)
    variant = R.Variant(variant_base.kind, alpha0=args.alpha0,
                        skipinit_s0=args.alpha0)
    seed = int(os.environ.get(ENV_SEED, args.seed))
    rng = SeededRng(seed)
    if body == "tx":
        stack = models.build_transformer_stack(args.depth, args.width, args.heads,
                                               variant, rng.child("init"))
        x = Tensor(rng.child("input").normal(0, 1, (args.tokens, args.width)))
    else:
        cfg = R.StackConfig(depth=args.depth, width=args.width, variant=variant,
                            branch_layers=2 if variant.kind == "FixUp" else 1)
        stack = R.build_fc_stack(cfg, rng.child("init"))
        x = Tensor(rng.child("input").normal(0, 1, (args.tokens, args.width)))
    J = iso.jacobian(stack, x)
    result = iso.spectrum_stats(iso.svd(J).singular_values, tau=args.threshold)
    serialize.export_spectrum(result, args.out)
    print(f"wrote {args.out}: chi={result.chi:.6f} "
          f"vanishing={result.vanishing_count}/{len(result.singular_values)}")
    return 0


def cmd_train_lm(args) -> int:
    cfg = _build_train_config(args)
    cfg.model = "transformer-decoder"
    cfg.dataset = "corpus"
    if args.warmup is not None:
        cfg.schedule = "linear_warmup"
        cfg.warmup_steps = int(args.warmup)
    log = train(cfg, keep_model=bool(args.checkpoint))
    serialize.export_runlog(log, args.out)
    if args.checkpoint:
        serialize.save_checkpoint(log.model.parameters(), args.checkpoint)
    bits = log.final_metrics.get("bits_per_token", float("nan"))
    print(f"variant={cfg.variant} alpha0={cfg.alpha0} diverged={log.diverged} "
          f"final_loss={log.final_metrics.get('final_loss', float('nan')):.4f} "
          f"bits_per_char={bits:.4f}")
    return 0


def cmd_alpha_heatmap(args) -> int:
    log = serialize.import_runlog(args.runlog)
    if not log.alpha_rows:
        raise ConfigError("run log has no residual-weight snapshots")
    serialize.export_alpha_matrix(log.alpha_rows, args.out)
    print(f"wrote {args.out}: {len(log.alpha_rows)} epochs x {len(log.alpha_rows[0])} layers")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="rezero-lab", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("toy-contour", help="gradient-norm contour grid export")
    sub.add_argument("--depth", type=int, default=5)
    sub.add_argument("--target", type=float, default=50.0)
    sub.add_argument("--w-min", type=float, default=-3.0)
    sub.add_argument("--w-max", type=float, default=3.0)
    sub.add_argument("--alpha-min", type=float, default=-1.0)
    sub.add_argument("--alpha-max", type=float, default=2.0)
    sub.add_argument("--w-samples", type=int, default=61)
    sub.add_argument("--alpha-samples", type=int, default=61)
    sub.add_argument("--out", default="toy_contour.txt")
    sub.set_defaults(func=cmd_toy_contour)

    sub = subs.add_parser("toy-train", help="single-neuron gradient descent trajectory")
    sub.add_argument("--depth", type=int, default=5)
    sub.add_argument("--target", type=float, default=50.0)
    sub.add_argument("--lr", type=float, default=1e-5)
    sub.add_argument("--steps", type=int, default=10_000)
    sub.add_argument("--w0", type=float, default=1.0)
    sub.add_argument("--alpha0", type=float, default=0.0)
    sub.add_argument("--out", default="toy_trajectory.csv")
    sub.set_defaults(func=cmd_toy_train)

    sub = subs.add_parser("fc-compare", help="variant convergence-speed comparison")
    _train_flags(sub)
    sub.add_argument("--seeds", type=int, default=5)
    sub.add_argument("--threshold", type=float, default=0.3)
    sub.add_argument("--out-dir", default="fc_compare")
    sub.set_defaults(func=cmd_fc_compare)

    sub = subs.add_parser("deep-fc", help="deep-stack trainability report")
    _train_flags(sub)
    sub.add_argument("--out", default="deep_fc.csv")
    sub.set_defaults(func=cmd_deep_fc)

    sub = subs.add_parser("jacobian-spectrum", help="input-output Jacobian spectrum export")
    sub.add_argument("--model", required=True,
                     help="<variant>-tx or <variant>-fc, e.g. rezero-tx")
    sub.add_argument("--depth", type=int, default=12)
    sub.add_argument("--width", type=int, default=16)
    sub.add_argument("--tokens", type=int, default=8)
    sub.add_argument("--heads", type=int, default=2)
    sub.add_argument("--alpha0", type=float, default=0.0)
    sub.add_argument("--threshold", type=float, default=1e-6)
    sub.add_argument("--seed", type=int, default=1234)
    sub.add_argument("--out", default="spectrum.txt")
    sub.set_defaults(func=cmd_jacobian_spectrum)

    sub = subs.add_parser("train-lm", help="tiny character-level language model")
    _train_flags(sub)
    sub.add_argument("--warmup", default=None,
                     help="steps of linear learning-rate warm-up")
    sub.add_argument("--checkpoint", default=None)
    sub.add_argument("--out", default="train_lm.csv")
    sub.set_defaults(func=cmd_train_lm)

    sub = subs.add_parser("alpha-heatmap", help="epoch x layer |alpha| matrix export")
    sub.add_argument("--runlog", required=True)
    sub.add_argument("--out", default="alpha_heatmap.txt")
    sub.set_defaults(func=cmd_alpha_heatmap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ContractError, ShapeError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
