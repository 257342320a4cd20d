"""Text formats: tensor dumps, layer checkpoints, run-log CSVs, spectrum and
contour exports, and the line-oriented config files.

All floats print with 17 significant digits, which round-trips float64
exactly, so export followed by import is bit-identical.
"""

from __future__ import annotations

import csv
import io
import os

import numpy as np

from .errors import ConfigError
from .tensor import Parameter, Tensor


def fmt(value: float) -> str:
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# tensor dump format: `shape: d1 d2 ... dk` then row-major values


def dump_tensor(t: Tensor, fh) -> None:
    fh.write("shape: " + " ".join(str(d) for d in t.shape) + "\n")
    flat = t.data.reshape(-1)
    fh.write(" ".join(fmt(v) for v in flat) + "\n")


def load_tensor(fh) -> Tensor:
    header = fh.readline().strip()
    if not header.startswith("shape:"):
        raise ConfigError(f"bad tensor header {header!r}")
    shape = [int(d) for d in header[len("shape:"):].split()]
    values = [float(v) for v in fh.readline().split()]
    expected = int(np.prod(shape)) if shape else 1
    if len(values) != expected:
        raise ConfigError(f"tensor body has {len(values)} values, expected {expected}")
    return Tensor(np.array(values).reshape(shape))


def dumps_tensor(t: Tensor) -> str:
    buf = io.StringIO()
    dump_tensor(t, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# checkpoints: one `[param <name>]` section per parameter


def save_checkpoint(params, path: str) -> None:
    with open(path, "w") as fh:
        for p in params:
            fh.write(f"[param {p.name}]\n")
            dump_tensor(p.value, fh)


def load_checkpoint(params, path: str) -> None:
    """Restore parameter values in place; names and shapes must match."""
    with open(path) as fh:
        by_name = {}
        line = fh.readline()
        while line:
            header = line.strip()
            if not (header.startswith("[param ") and header.endswith("]")):
                raise ConfigError(f"bad checkpoint section {header!r}")
            name = header[len("[param "):-1]
            by_name[name] = load_tensor(fh)
            line = fh.readline()
    for p in params:
        if p.name not in by_name:
            raise ConfigError(f"checkpoint is missing parameter {p.name!r}")
        t = by_name[p.name]
        if t.shape != p.value.shape:
            raise ConfigError(f"shape mismatch for {p.name!r}")
        p.value = t


# ---------------------------------------------------------------------------
# run logs: CSV with a `# key = value` config preamble; |alpha| snapshots go
# to a sidecar CSV next to the main file


def _alpha_path(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return stem + "_alpha" + (ext or ".csv")


def export_runlog(log, path: str) -> str:
    with open(path, "w", newline="") as fh:
        for key in sorted(log.config):
            fh.write(f"# {key} = {log.config[key]}\n")
        fh.write(f"# seed = {log.seed}\n")
        fh.write(f"# diverged = {log.diverged}\n")
        for key in sorted(log.final_metrics):
            fh.write(f"# metric.{key} = {log.final_metrics[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "lr"])
        for i, (loss, lr) in enumerate(zip(log.losses, log.lrs)):
            writer.writerow([i, fmt(loss), fmt(lr)])
    if log.alpha_rows:
        width = len(log.alpha_rows[0])
        with open(_alpha_path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch"] + [f"alpha_{i}" for i in range(width)])
            for e, row in enumerate(log.alpha_rows):
                writer.writerow([e] + [fmt(v) for v in row])
    return path


def import_runlog(path: str):
    from .train import RunLog  # local import to avoid a cycle

    config, metrics = {}, {}
    seed, diverged = 0, False
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                key, value = key.strip(), value.strip()
                if key == "seed":
                    seed = int(value)
                elif key == "diverged":
                    diverged = value == "True"
                elif key.startswith("metric."):
                    metrics[key[len("metric."):]] = float(value)
                else:
                    config[key] = value
            elif line.strip() and not line.startswith("iteration"):
                rows.append(line.strip().split(","))
    log = RunLog(config=config, seed=seed, diverged=diverged)
    log.final_metrics = metrics
    log.losses = [float(r[1]) for r in rows]
    log.lrs = [float(r[2]) for r in rows]
    alpha_file = _alpha_path(path)
    if os.path.exists(alpha_file):
        with open(alpha_file, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            log.alpha_rows = [[float(v) for v in row[1:]] for row in reader]
    return log


def export_alpha_matrix(alpha_rows, path: str) -> str:
    """Epoch-by-layer |alpha| matrix as structured text."""
    with open(path, "w") as fh:
        fh.write(f"epochs = {len(alpha_rows)}\n")
        fh.write(f"layers = {len(alpha_rows[0]) if alpha_rows else 0}\n")
        for row in alpha_rows:
            fh.write(" ".join(fmt(v) for v in row) + "\n")
    return path


# ---------------------------------------------------------------------------
# spectrum and contour exports (structured text, `key = value`)


def export_spectrum(result, path: str) -> str:
    h = result.histogram
    with open(path, "w") as fh:
        fh.write(f"count = {len(result.singular_values)}\n")
        fh.write(f"chi = {fmt(result.chi)}\n")
        fh.write(f"vanishing_count = {result.vanishing_count}\n")
        fh.write(f"threshold = {fmt(result.threshold)}\n")
        fh.write("singular_values = " + " ".join(fmt(v) for v in result.singular_values) + "\n")
        fh.write(f"histogram_bins = {h.bins}\n")
        fh.write(f"histogram_lo = {fmt(h.lo)}\n")
        fh.write(f"histogram_hi = {fmt(h.hi)}\n")
        fh.write("histogram_edges = " + " ".join(fmt(v) for v in h.edges) + "\n")
        fh.write("histogram_counts = " + " ".join(str(int(c)) for c in h.counts) + "\n")
        fh.write(f"histogram_underflow = {h.underflow}\n")
    return path


def import_spectrum(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def export_grid(grid, path: str) -> str:
    with open(path, "w") as fh:
        fh.write("w_values = " + " ".join(fmt(v) for v in grid.w_values) + "\n")
        fh.write("alpha_values = " + " ".join(fmt(v) for v in grid.alpha_values) + "\n")
        fh.write("log_norms = " + " ".join(fmt(v) for v in grid.log_norms.reshape(-1)) + "\n")
        fh.write("clamped = " + " ".join(str(int(v)) for v in grid.clamped.reshape(-1)) + "\n")
    return path


def export_trajectory(run, path: str) -> str:
    with open(path, "w", newline="") as fh:
        fh.write(f"# diverged = {run.diverged}\n")
        writer = csv.writer(fh)
        writer.writerow(["step", "w", "alpha", "loss"])
        for p in run.points:
            writer.writerow([p.step, fmt(p.w), fmt(p.alpha), fmt(p.loss)])
    return path


def export_cosines(values, path: str) -> str:
    with open(path, "w") as fh:
        fh.write("depth_cosines = " + " ".join(fmt(v) for v in values) + "\n")
    return path


# ---------------------------------------------------------------------------
# config files: line-oriented `key = value`, # comments


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path: str) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())
