"""Central-difference gradient checking against the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Singleton axes placed between the probe axis and a probed tensor's own
# shape. Must exceed the rank of every intermediate in the checked function so
# the probe axis always broadcasts to the front.
PROBE_PAD = 5
REL_FLOOR = 1e-8


@dataclass
class CheckReport:
    op_name: str
    max_abs_err: float
    max_rel_err: float
    tolerance: float
    passed: bool
    seed: int
    n_coords: int = 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.op_name:<40s} max_rel={self.max_rel_err:.3e} "
                f"max_abs={self.max_abs_err:.3e} tol={self.tolerance:.0e} "
                f"coords={self.n_coords} seed={self.seed}")


# (multiple of epsilon, weight) pairs: f' ~ sum_k w_k (f(x + k e) - f(x - k e)) / e
STENCILS = {2: ((1, 0.5),), 4: ((1, 8.0 / 12.0), (2, -1.0 / 12.0))}


def _loss_value(out: Tensor):
    return out.data.sum()


def _numeric_loop(fn, inputs, k, coords, eps, stencil):
    x = inputs[k]
    flat = x.data.reshape(-1)
    num = np.zeros(len(coords), dtype=x.data.dtype)
    for j, c in enumerate(coords):
        orig = flat[c]
        for mult, w in stencil:
            flat[c] = orig + mult * eps
            fp = _loss_value(fn(*inputs))
            flat[c] = orig - mult * eps
            fm = _loss_value(fn(*inputs))
            num[j] += w * (fp - fm) / eps
        flat[c] = orig
    return num


def _numeric_batched(fn, inputs, k, coords, eps, chunk, stencil):
    x = inputs[k]
    base = x.data
    lead = (1,) * PROBE_PAD
    num = np.zeros(len(coords), dtype=base.dtype)
    ref_ndim = fn(*inputs).data.ndim
    m = len(stencil)
    try:
        for start in range(0, len(coords), chunk):
            cs = np.asarray(coords[start:start + chunk])
            n = len(cs)
            # rows: [+k1 e, -k1 e, +k2 e, -k2 e, ...] blocks of n probes each
            probe = np.broadcast_to(base, (2 * m * n,) + lead + base.shape).copy()
            view = probe.reshape(2 * m * n, -1)
            rows = np.arange(n)
            for s, (mult, _) in enumerate(stencil):
                view[rows + 2 * s * n, cs] += mult * eps
                view[rows + (2 * s + 1) * n, cs] -= mult * eps
            x.data = probe
            out = fn(*inputs).data
            if out.ndim > ref_ndim and out.shape[0] == 2 * m * n:
                f = out.reshape(2 * m * n, -1).sum(axis=1)
                for s, (_, w) in enumerate(stencil):
                    fp = f[2 * s * n:(2 * s + 1) * n]
                    fm = f[(2 * s + 1) * n:(2 * s + 2) * n]
                    num[start:start + n] += w * (fp - fm) / eps
            # otherwise the output does not depend on this input: derivative stays 0
    finally:
        x.data = base
    return num


PRECISIONS = ("double", "extended", "auto")
# auto mode re-evaluates coordinates whose float64 error exceeds this share of the tolerance
REFINE_SHARE = 0.1


def finite_diff_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-6,
    tolerance: float = 1e-6,
    seed: int = 0,
    op_name: str = "fn",
    max_coords: int | None = None,
    batched: bool = False,
    chunk: int = 256,
    precision: str = "extended",
    order: int = 2,
) -> CheckReport:
    """Compare autodiff gradients of ``sum(fn(*inputs))`` with central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``. With
    ``max_coords`` set, that many coordinates per input are sampled using
    ``seed``; otherwise every element is checked. ``batched=True`` evaluates
    all perturbations of one input in a single call by giving the input a
    leading probe axis; ``fn`` must then broadcast over leading dimensions.

    ``precision`` picks the dtype of the perturbed forward passes; the
    analytic side is always float64. ``"extended"`` uses numpy's long double
    (80-bit on x86), cutting difference round-off by ~2000x so that small
    gradient entries are resolved. ``"auto"`` runs in float64 first and
    repeats only the coordinates whose error exceeds a tenth of the tolerance
    in extended precision; coordinates still failing are retried at epsilon/10
    and epsilon/100 so that a relu/max kink within the stencil is not
    mistaken for a wrong gradient. ``order=4`` switches from the 3-point to the
    5-point central stencil, whose truncation error is O(epsilon^4).
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in (0, 1e-3], got {epsilon}")
    if order not in STENCILS:
        raise ValueError(f"order must be one of {sorted(STENCILS)}, got {order}")
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {PRECISIONS}, got {precision!r}")
    inputs = list(inputs)
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        out = fn(*inputs)
        ad.backward(ad.reduce_sum(out))
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    finally:
        for t, flag in zip(inputs, saved_flags):
            t.requires_grad = flag
            t.grad = None

    rng = np.random.default_rng(seed)
    stencil = STENCILS[order]
    coords = [_coords(t.data.size, max_coords, rng) for t in inputs]
    first = np.longdouble if precision == "extended" else np.float64
    numeric = _numeric_all(fn, inputs, epsilon, batched, chunk, coords, stencil, first)
    if precision == "auto":
        # 1) float64 misses go to long double at the same epsilon
        _refine(fn, inputs, analytic, coords, numeric, REFINE_SHARE * tolerance, batched, chunk, stencil,
                [epsilon])
        # 2) remaining misses retry at smaller steps: a nearby kink of relu/max drops out once
        #    the stencil no longer straddles it, while a wrong gradient stays wrong at every step
        _refine(fn, inputs, analytic, coords, numeric, tolerance, batched, chunk, stencil,
                [epsilon / 10, epsilon / 100])

    max_abs = max_rel = 0.0
    total = 0
    for ana_full, cs, num in zip(analytic, coords, numeric):
        if len(cs):
            abs_err, rel = _errors(ana_full.reshape(-1)[cs], num)
            max_abs = max(max_abs, float(abs_err.max()))
            max_rel = max(max_rel, float(rel.max()))
        total += len(cs)
    return CheckReport(op_name, max_abs, max_rel, tolerance, max_rel <= tolerance, seed, total)


def _refine(fn, inputs, analytic, coords, numeric, threshold, batched, chunk, stencil, steps) -> None:
    """Re-evaluate coordinates whose relative error exceeds ``threshold``; keep the closer estimate."""
    for eps in steps:
        redo = []
        for ana_full, cs, num in zip(analytic, coords, numeric):
            _, rel = _errors(ana_full.reshape(-1)[cs], num)
            redo.append(np.flatnonzero(rel > threshold))
        if not any(len(r) for r in redo):
            return
        sub = [cs[r] for cs, r in zip(coords, redo)]
        refined = _numeric_all(fn, inputs, eps, batched, chunk, sub, stencil, np.longdouble)
        for ana_full, cs, num, r, ref in zip(analytic, coords, numeric, redo, refined):
            ana = ana_full.reshape(-1)[cs[r]]
            _, old_rel = _errors(ana, num[r])
            _, new_rel = _errors(ana, ref)
            num[r] = np.where(new_rel < old_rel, ref, num[r])


def _coords(size: int, max_coords: int | None, rng: np.random.Generator) -> np.ndarray:
    if max_coords is not None and max_coords < size:
        return np.sort(rng.choice(size, size=max_coords, replace=False))
    return np.arange(size)


def _errors(ana: np.ndarray, num: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = num.astype(np.float64)
    abs_err = np.abs(ana - num)
    return abs_err, abs_err / np.maximum(np.maximum(np.abs(ana), np.abs(num)), REL_FLOOR)


def _numeric_all(fn, inputs, epsilon, batched, chunk, coords, stencil, dtype):
    """Numeric derivatives at ``coords`` of every input, with inputs cast to ``dtype``."""
    originals = [t.data for t in inputs]
    for t in inputs:
        t.data = t.data.astype(dtype)
    results = []
    try:
        with ad.no_grad():
            for k, cs in enumerate(coords):
                if batched:
                    results.append(_numeric_batched(fn, inputs, k, cs, epsilon, chunk, stencil))
                else:
                    results.append(_numeric_loop(fn, inputs, k, cs, epsilon, stencil))
    finally:
        for t, data in zip(inputs, originals):
            t.data = data
    return results
