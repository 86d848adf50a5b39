"""Traversal and initialization helpers for dataclass parameter bundles.

Bundles are plain dataclasses whose fields are Tensors (learnable), numpy
arrays (buffers such as batch-norm running stats), nested bundles, lists of
bundles, or plain scalars (hyperparameters, skipped by traversal).
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor


def _children(obj, prefix: str):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield f"{prefix}{f.name}", getattr(obj, f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield f"{prefix}{i}", item


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` in field declaration order."""
    for name, value in _children(obj, prefix):
        if isinstance(value, Tensor):
            yield name, value
        elif dataclasses.is_dataclass(value) or isinstance(value, (list, tuple)):
            yield from named_parameters(value, name + ".")


def named_buffers(obj, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
    for name, value in _children(obj, prefix):
        if isinstance(value, np.ndarray):
            yield name, value
        elif dataclasses.is_dataclass(value) or isinstance(value, (list, tuple)):
            yield from named_buffers(value, name + ".")


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def num_parameters(obj) -> int:
    return sum(t.size for _, t in named_parameters(obj))


def zero_grads(obj) -> None:
    for t in parameters(obj):
        t.grad = None


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) learnable tensor."""
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
