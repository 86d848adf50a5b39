"""Classifier wrapper, Adam training loop, evaluation and the ablation runner."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import assign_records, load_checkpoint, save_checkpoint
from .config import format_lines
from .errors import ConfigError, ConfigMismatch, DivergenceDetected, NonFiniteValue
from .layers import EVAL, TRAIN
from .model import BlockConfig, EncoderParams, count_parameters, encoder_forward, init_encoder
from .params import named_buffers, num_parameters, parameters, uniform, zeros
from .tasks import Dataset, SyntheticTask, gen_task

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9

# named sub-streams derived from one seed
STREAM_INIT, STREAM_DATA, STREAM_DROPOUT = 0, 1, 2


def substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


@dataclass
class ClassifierParams:
    encoder: EncoderParams
    head_W: Tensor
    head_b: Tensor


class Model:
    """Encoder stack, time mean-pooling and a linear classification head."""

    def __init__(self, config: BlockConfig, num_classes: int = 2, seed: int = 0):
        self.config = config
        self.num_classes = num_classes
        rng = substream(seed, STREAM_INIT)
        self.params = ClassifierParams(init_encoder(config, rng), uniform(rng, (config.d, num_classes), config.d),
                                       zeros((num_classes,)))

    def logits(self, X, mode: str = EVAL, rng: np.random.Generator | None = None,
               update_stats: bool = True) -> Tensor:
        X = X if isinstance(X, Tensor) else Tensor(X)
        h = encoder_forward(X, self.params.encoder, self.config, mode, rng, update_stats)
        pooled = ad.reduce_mean(h, axis=-2)
        return ad.matmul(pooled, self.params.head_W) + self.params.head_b

    def parameter_count(self) -> int:
        return num_parameters(self.params)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.config, self.params, {"num_classes": self.num_classes, **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        config, meta, records = load_checkpoint(path)
        model = cls(config, int(meta.get("num_classes", 2)))
        assign_records(model.params, records)
        return model


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), np.asarray(labels)]
    return -ad.reduce_mean(picked)


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr != 0.0:
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    block: BlockConfig = field(default_factory=BlockConfig)
    task: SyntheticTask = field(default_factory=SyntheticTask)
    steps: int = 3000
    batch: int = 16
    lr: float = 1e-3
    lr_decay_every: int = 1000
    lr_decay_factor: float = 0.5
    clip_norm: float = 1.0
    seed: int = 0
    eval_every: int = 0
    target_accuracy: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1", "steps")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0", "lr")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1", "batch")

    def lr_at(self, step: int) -> float:
        if self.lr_decay_every > 0:
            return self.lr * self.lr_decay_factor ** (step // self.lr_decay_every)
        return self.lr

    def fingerprint(self) -> str:
        flat = {}
        for key, value in dataclasses.asdict(self).items():
            if isinstance(value, dict):
                flat.update({f"{key}.{k}": v for k, v in value.items()})
            else:
                flat[key] = value
        return hashlib.sha256(format_lines(flat).encode()).hexdigest()[:12]


@dataclass
class RunReport:
    final_train_loss: float
    final_val_accuracy: float
    final_val_loss: float
    loss_curve: list[float]
    lr_curve: list[float]
    grad_norms: list[float]
    fingerprint: str
    wall_time: float
    steps_run: int
    parameter_count: int
    val_curve: list[tuple[int, float]] = field(default_factory=list)
    model: Model | None = field(default=None, repr=False, compare=False)

    def write_curve_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "lr", "grad_norm"])
            for i, (loss, lr, gn) in enumerate(zip(self.loss_curve, self.lr_curve, self.grad_norms)):
                w.writerow([i, repr(loss), repr(lr), repr(gn)])

    def summary_row(self) -> dict:
        return {"fingerprint": self.fingerprint, "steps": self.steps_run, "params": self.parameter_count,
                "final_train_loss": repr(self.final_train_loss),
                "final_val_accuracy": repr(self.final_val_accuracy),
                "final_val_loss": repr(self.final_val_loss)}


def _grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def evaluate_model(model: Model, X: np.ndarray, y: np.ndarray, batch: int = 256) -> tuple[float, float]:
    """Eval-mode accuracy and mean cross-entropy."""
    correct, loss_sum = 0, 0.0
    with ad.no_grad():
        for start in range(0, len(y), batch):
            xb, yb = X[start:start + batch], y[start:start + batch]
            logits = model.logits(xb, EVAL)
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == yb))
            loss_sum += cross_entropy(logits, yb).item() * len(yb)
    n = max(len(y), 1)
    return correct / n, loss_sum / n


def evaluate(checkpoint, dataset: Dataset, split: str = "val") -> tuple[float, float]:
    """Accuracy and loss of a checkpoint (path or :class:`Model`) on a dataset split."""
    model = checkpoint if isinstance(checkpoint, Model) else Model.load(checkpoint)
    X, y = (dataset.X_val, dataset.y_val) if split == "val" else (dataset.X_train, dataset.y_train)
    if X.shape[-1] != model.config.feat_dim:
        raise ConfigMismatch(f"dataset feature dim {X.shape[-1]} != checkpoint feat_dim {model.config.feat_dim}")
    if len(y) and int(y.max()) >= model.num_classes:
        raise ConfigMismatch(f"dataset has label {int(y.max())} but model has {model.num_classes} classes")
    return evaluate_model(model, X, y)


def train(config: TrainConfig, dataset: Dataset | None = None, fixed_batch: np.ndarray | None = None,
          log=None) -> RunReport:
    """Train a fresh model; returns a report holding the trained model.

    ``fixed_batch`` (indices into the training split) trains on the same batch
    every step, which is how the overfit sanity check runs.
    """
    start = time.perf_counter()
    block = config.block
    if block.feat_dim != config.task.F:
        block = dataclasses.replace(block, feat_dim=config.task.F)
    data = dataset if dataset is not None else gen_task(config.task)
    model = Model(block, config.task.num_classes, config.seed)
    params = parameters(model.params)
    opt = Adam(params, config.lr)
    data_rng = substream(config.seed, STREAM_DATA)
    drop_rng = substream(config.seed, STREAM_DROPOUT)
    n_train = len(data.y_train)
    order, cursor = data_rng.permutation(n_train), 0

    losses, lrs, norms, val_curve = [], [], [], []

    def report(steps_run: int, diverged: bool = False) -> RunReport:
        if steps_run and not diverged:
            acc, vloss = evaluate_model(model, data.X_val, data.y_val)
        else:
            acc, vloss = float("nan"), float("nan")
        return RunReport(losses[-1] if losses else float("nan"), acc, vloss, losses, lrs, norms,
                         config.fingerprint(), time.perf_counter() - start, steps_run,
                         model.parameter_count(), val_curve, model)

    for step in range(config.steps):
        if fixed_batch is not None:
            idx = np.asarray(fixed_batch)
        else:
            if cursor + config.batch > n_train:
                order, cursor = data_rng.permutation(n_train), 0
            idx = order[cursor:cursor + config.batch]
            cursor += config.batch
        for p in params:
            p.grad = None
        # non-finite values are detected below, so numpy's overflow warnings are noise here
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss = cross_entropy(model.logits(data.X_train[idx], TRAIN, drop_rng), data.y_train[idx])
                loss.backward()
                gn = _grad_norm(params)
            lval = loss.item()
        except NonFiniteValue as exc:
            raise DivergenceDetected(f"non-finite activations at step {step}: {exc}",
                                     report(step, diverged=True)) from exc
        if not (math.isfinite(lval) and math.isfinite(gn)):
            raise DivergenceDetected(f"non-finite loss/grad at step {step}: loss={lval} grad_norm={gn}",
                                     report(step, diverged=True))
        if config.clip_norm > 0 and gn > config.clip_norm:
            scale = config.clip_norm / gn
            for p in params:
                if p.grad is not None:
                    p.grad = p.grad * scale
        lr = config.lr_at(step)
        opt.step(lr)
        losses.append(lval)
        lrs.append(lr)
        norms.append(gn)
        # overflowing activations can leave the loss finite but poison the running statistics
        bad = [n for n, b in named_buffers(model.params) if not np.isfinite(b).all()]
        if bad:
            raise DivergenceDetected(f"non-finite buffer {bad[0]} after step {step}", report(step + 1, diverged=True))
        if config.eval_every and (step + 1) % config.eval_every == 0:
            acc, _ = evaluate_model(model, data.X_val, data.y_val)
            val_curve.append((step + 1, acc))
            if log:
                log(f"step {step + 1}: loss={lval:.4f} val_acc={acc:.4f}")
            if config.target_accuracy and acc >= config.target_accuracy:
                return report(step + 1)
    return report(config.steps)


# -- ablation -----------------------------------------------------------------

TABLE3_GRID = [
    ("parallel", {"enable_l2g": False, "enable_g2l": False, "enable_dyrelu": False}),
    ("parallel+L2G", {"enable_l2g": True, "enable_g2l": False, "enable_dyrelu": False}),
    ("parallel+G2L", {"enable_l2g": False, "enable_g2l": True, "enable_dyrelu": True}),
    ("parallel+G2L*", {"enable_l2g": False, "enable_g2l": True, "enable_dyrelu": False}),
    ("parallel+L2G+G2L*", {"enable_l2g": True, "enable_g2l": True, "enable_dyrelu": False}),
    ("parallel+L2G+G2L", {"enable_l2g": True, "enable_g2l": True, "enable_dyrelu": True}),
]

_ON = {"enable_l2g": True, "enable_g2l": True, "enable_dyrelu": True}
_OFF = {"enable_l2g": False, "enable_g2l": False, "enable_dyrelu": False}
TABLE4_GRID = [
    (f"{mode}/{'interaction' if on else 'none'}", {"fusion_mode": mode, **(_ON if on else _OFF)})
    for mode in ("add", "concat", "sfm") for on in (False, True)
]

ABLATION_COLUMNS = ["name", "fusion_mode", "enable_l2g", "enable_g2l", "enable_dyrelu", "params_block",
                    "params_encoder", "seeds", "accuracy", "acc_mean", "acc_sd", "loss_mean", "loss_sd", "status"]


def _run_cell(args):
    base, delta, seed = args
    try:
        block = dataclasses.replace(base.block, **delta)
        task = dataclasses.replace(base.task, seed=seed)
        cfg = dataclasses.replace(base, block=block, task=task, seed=seed)
        rep = train(cfg)
        return seed, rep.final_val_accuracy, rep.final_train_loss, None
    except Exception as exc:  # a failed cell is reported, not fatal
        return seed, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"


def ablate(grid, base: TrainConfig, seeds=(0, 1, 2), workers: int = 1) -> list[dict]:
    """Train every grid cell over ``seeds``; one row per cell with mean/sd accuracy."""
    jobs = [(base, delta, s) for _, delta in grid for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = []
    for i, (name, delta) in enumerate(grid):
        cell = results[i * len(seeds):(i + 1) * len(seeds)]
        try:
            counts = count_parameters(dataclasses.replace(base.block, feat_dim=base.task.F, **delta))
        except ConfigError:  # the cell's own run reports the error
            counts = {"block": 0, "encoder": 0}
        accs = np.array([c[1] for c in cell])
        losses = np.array([c[2] for c in cell])
        errors = [c[3] for c in cell if c[3]]
        rows.append({
            "name": name,
            "fusion_mode": delta.get("fusion_mode", base.block.fusion_mode),
            "enable_l2g": delta.get("enable_l2g", base.block.enable_l2g),
            "enable_g2l": delta.get("enable_g2l", base.block.enable_g2l),
            "enable_dyrelu": delta.get("enable_dyrelu", base.block.enable_dyrelu),
            "params_block": counts["block"],
            "params_encoder": counts["encoder"],
            "seeds": len(seeds),
            "accuracy": f"{np.mean(accs):.4f} +/- {np.std(accs, ddof=1) if len(seeds) > 1 else 0.0:.4f}",
            "acc_mean": float(np.mean(accs)),
            "acc_sd": float(np.std(accs, ddof=1)) if len(seeds) > 1 else 0.0,
            "loss_mean": float(np.mean(losses)),
            "loss_sd": float(np.std(losses, ddof=1)) if len(seeds) > 1 else 0.0,
            "status": "ok" if not errors else "failed: " + "; ".join(errors),
        })
    return rows


def write_rows_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
