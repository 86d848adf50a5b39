"""Synthetic binary sequence-classification tasks.

All tasks draw a ``(T, F)`` frame sequence of Gaussian background noise and
embed short +/-1 patterns in it:

motif-match
    A fixed bank of ``n_motifs`` prototype motifs (``motif_len`` frames each)
    is drawn per task. Frames ``[0, motif_len)`` carry a key motif; one more
    motif sits at a random later position. Label 1 iff the later motif equals
    the key. Solving it needs the key (global retrieval) and the local motif.
long-copy-detect
    A random segment appears in the first half; the second half holds either
    an exact copy (label 1) or a fresh random segment (label 0).
parity-span
    Channel 0 holds a +/-1 bit per frame, channel 1 marks the two ends of a
    span with 1.0. Label = parity of the number of +1 bits inside the span.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("motif-match", "long-copy-detect", "parity-span")
_KIND_IDS = {k: i for i, k in enumerate(KINDS)}


@dataclass
class SyntheticTask:
    kind: str = "motif-match"
    T: int = 64
    F: int = 16
    num_classes: int = 2
    seed: int = 0
    num_samples: int = 20000
    noise: float = 0.3
    motif_len: int = 8
    n_motifs: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"task kind {self.kind!r} not in {KINDS}", "kind")
        if self.num_classes != 2:
            raise ConfigError("all synthetic tasks are binary (num_classes = 2)", "num_classes")
        if self.T < 4 * self.motif_len or self.F < 2 or self.num_samples < 5:
            raise ConfigError(f"task too small: T={self.T}, F={self.F}, num_samples={self.num_samples}", "T")


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray

    @property
    def feat_dim(self) -> int:
        return self.X_train.shape[-1]


def is_validation(seed: int, index: int) -> bool:
    """Seed-derived hash split: roughly one sample in five goes to validation."""
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % 5 == 0


def motif_bank(task: SyntheticTask) -> np.ndarray:
    rng = np.random.default_rng([task.seed, _KIND_IDS[task.kind], 1])
    return rng.choice([-1.0, 1.0], size=(task.n_motifs, task.motif_len, task.F))


def _motif_match(task: SyntheticTask, rng: np.random.Generator):
    bank = motif_bank(task)
    n, T, M = task.num_samples, task.T, task.motif_len
    X = rng.normal(0.0, task.noise, size=(n, T, task.F))
    y = np.zeros(n, dtype=np.int64)
    for i in range(n):
        key = rng.integers(task.n_motifs)
        match = rng.random() < 0.5
        other = key if match else (key + 1 + rng.integers(task.n_motifs - 1)) % task.n_motifs
        pos = rng.integers(2 * M, T - M + 1)
        X[i, :M] += bank[key]
        X[i, pos:pos + M] += bank[other]
        y[i] = int(match)
    return X, y


def _long_copy(task: SyntheticTask, rng: np.random.Generator):
    n, T, M, F = task.num_samples, task.T, task.motif_len, task.F
    half = T // 2
    X = rng.normal(0.0, task.noise, size=(n, T, F))
    y = np.zeros(n, dtype=np.int64)
    for i in range(n):
        seg = rng.choice([-1.0, 1.0], size=(M, F))
        a = rng.integers(0, half - M + 1)
        b = rng.integers(half, T - M + 1)
        copy = rng.random() < 0.5
        X[i, a:a + M] += seg
        X[i, b:b + M] += seg if copy else rng.choice([-1.0, 1.0], size=(M, F))
        y[i] = int(copy)
    return X, y


def _parity_span(task: SyntheticTask, rng: np.random.Generator):
    n, T = task.num_samples, task.T
    X = rng.normal(0.0, task.noise, size=(n, T, task.F))
    y = np.zeros(n, dtype=np.int64)
    for i in range(n):
        bits = rng.choice([-1.0, 1.0], size=T)
        start = rng.integers(0, T // 2)
        end = rng.integers(start + 2, T)
        X[i, :, 0] += bits
        X[i, start, 1] += 1.0
        X[i, end, 1] += 1.0
        y[i] = int(np.sum(bits[start + 1:end] > 0) % 2)
    return X, y


_GENERATORS = {"motif-match": _motif_match, "long-copy-detect": _long_copy, "parity-span": _parity_span}


def gen_task(task: SyntheticTask) -> Dataset:
    """Deterministically generate and split the dataset for ``task``."""
    rng = np.random.default_rng([task.seed, _KIND_IDS[task.kind], 0])
    X, y = _GENERATORS[task.kind](task, rng)
    val = np.array([is_validation(task.seed, i) for i in range(task.num_samples)])
    return Dataset(X[~val], y[~val], X[val], y[val])


def scan_motif_label(frames: np.ndarray, bank: np.ndarray) -> int:
    """Recover a motif-match label from raw frames by correlation scanning.

    The key is the prototype best correlated with the leading frames; the
    later motif is the best (position, prototype) pair among later windows.
    """
    M = bank.shape[1]
    key = int(np.argmax([np.sum(frames[:M] * p) for p in bank]))
    best, best_proto = -np.inf, -1
    for s in range(M, frames.shape[0] - M + 1):
        window = frames[s:s + M]
        for j, p in enumerate(bank):
            score = np.sum(window * p)
            if score > best:
                best, best_proto = score, j
    return int(best_proto == key)
