"""Synthetic datasets: 2-d classification point clouds for the
fully-connected runs and a deterministic character corpus for the tiny
language model.

The corpus is generated from a fixed seed and word bank rather than shipped
as a data file; the measured properties (iterations to a loss threshold,
divergence behaviour) only need learnable character statistics, and the
generated text is identical on every run.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .tensor import SeededRng

CORPUS_SIZE = 100_000
CORPUS_SEED = 727

_WORDS = (
    "signal", "gate", "layer", "depth", "residual", "weight", "skip", "train",
    "deep", "network", "flows", "through", "every", "identity", "starts",
    "small", "grows", "slowly", "keeps", "stable", "path", "simple", "scalar",
    "zero", "one", "step", "learning", "faster", "norm", "value", "change",
)


def make_blobs(per_class: int, rng: SeededRng, spread: float = 0.6):
    """Two linearly separable gaussian blobs; returns (X [n,2], y [n])."""
    if per_class < 1:
        raise ConfigError("need at least one sample per class")
    a = rng.normal(0.0, spread, (per_class, 2)) + np.array([-2.0, -2.0])
    b = rng.normal(0.0, spread, (per_class, 2)) + np.array([2.0, 2.0])
    x = np.concatenate([a, b], axis=0)
    y = np.concatenate([np.zeros(per_class, dtype=np.intp),
                        np.ones(per_class, dtype=np.intp)])
    perm = rng.permutation(2 * per_class)
    return x[perm], y[perm]


def make_spirals(per_class: int, rng: SeededRng, noise: float = 0.08, turns: float = 1.75):
    """Two interleaved spirals; not linearly separable."""
    if per_class < 1:
        raise ConfigError("need at least one sample per class")
    ts = np.linspace(0.25, turns * 2.0 * np.pi, per_class)
    xs, ys = [], []
    for label, phase in ((0, 0.0), (1, np.pi)):
        r = ts / (turns * 2.0 * np.pi) * 2.5
        px = r * np.cos(ts + phase) + rng.normal(0, noise, (per_class,))
        py = r * np.sin(ts + phase) + rng.normal(0, noise, (per_class,))
        xs.append(np.stack([px, py], axis=1))
        ys.append(np.full(per_class, label, dtype=np.intp))
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys)
    perm = rng.permutation(2 * per_class)
    return x[perm], y[perm]


def make_dataset(kind: str, per_class: int, rng: SeededRng):
    if kind == "blobs":
        return make_blobs(per_class, rng)
    if kind == "spirals":
        return make_spirals(per_class, rng)
    raise ConfigError(f"unknown dataset {kind!r}")


@lru_cache(maxsize=1)
def load_corpus(size: int = CORPUS_SIZE, seed: int = CORPUS_SEED) -> str:
    """Deterministic pseudo-english text of roughly `size` characters."""
    rng = SeededRng(seed)
    pieces = []
    total = 0
    while total < size:
        length = int(rng.integers(4, 10))
        words = [_WORDS[int(i)] for i in rng.integers(0, len(_WORDS), (length,))]
        sentence = " ".join(words) + ". "
        pieces.append(sentence)
        total += len(sentence)
    return "".join(pieces)[:size]


class CharVocab:
    """Bidirectional char/int mapping over the corpus alphabet."""

    def __init__(self, text: str):
        self.chars = sorted(set(text))
        self._to_id = {c: i for i, c in enumerate(self.chars)}

    def __len__(self):
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        return np.array([self._to_id[c] for c in text], dtype=np.intp)

    def decode(self, ids) -> str:
        return "".join(self.chars[int(i)] for i in ids)


def lm_windows(encoded: np.ndarray, context: int, batch: int, rng: SeededRng):
    """Sample `batch` (input, target) windows of length `context`."""
    if encoded.size <= context + 1:
        raise ConfigError("corpus shorter than the context window")
    starts = rng.integers(0, encoded.size - context - 1, (batch,))
    xs = [encoded[s:s + context] for s in starts]
    ys = [encoded[s + 1:s + context + 1] for s in starts]
    return xs, ys


def classification_batches(x: np.ndarray, y: np.ndarray, batch: int, rng: SeededRng):
    """One epoch of shuffled minibatches."""
    perm = rng.permutation(x.shape[0])
    for start in range(0, x.shape[0], batch):
        idx = perm[start:start + batch]
        yield x[idx], y[idx]
