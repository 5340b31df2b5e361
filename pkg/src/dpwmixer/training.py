"""Loss, optimizer, schedule, the epoch loop and finite-difference checking."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as tn
from .data import WindowDataset
from .errors import ConfigError, DimensionError, DivergenceError
from .model import DpwModel, forward, predict
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

LR_GRID = (1e-4, 5e-4, 1e-3)
BATCH_GRID = (16, 32, 64)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 5
    seed: int = 0
    eta_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_batches: int | None = None  # per epoch; None = all windows

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0 (got {self.learning_rate})")
        for name in ("batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.patience > self.max_epochs:
            problems.append(f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})")
        if self.eta_min < 0 or self.eta_min > self.learning_rate:
            problems.append("eta_min must lie in [0, learning_rate]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            problems.append("adam betas must lie in [0, 1) and eps must be > 0")
        if self.max_batches is not None and self.max_batches < 1:
            problems.append("max_batches must be >= 1 when set")
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = math.inf
    stopped_early: bool = False
    final: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def val_losses(self) -> list[float]:
        return [e.val_mse for e in self.epochs]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse", "lr", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_mse), repr(e.val_mse), repr(e.lr), f"{e.seconds:.6f}"])

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "stopped_early": self.stopped_early,
            "epochs_run": len(self.epochs),
            "final": self.final,
        }

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = tn.sub(pred, Tensor(target))
    return tn.mean(tn.mul(diff, diff))


def mse_metric(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mae_metric(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mae: prediction {pred.shape} vs target {target.shape}")
    return float(np.mean(np.abs(pred - target)))


# ---------------------------------------------------------------------------
# optimizer and schedule


def cosine_lr(epoch: float, max_epochs: int, lr0: float, eta_min: float = 0.0) -> float:
    if not 0 <= epoch <= max_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {max_epochs}]")
    return eta_min + (lr0 - eta_min) * (1.0 + math.cos(math.pi * epoch / max_epochs)) / 2.0


class Adam:
    """Bias-corrected Adam over a fixed list of tensors.

    Moments live in one flat buffer so an update is a handful of vector ops.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        sizes = [p.size for p in self.params]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.m = np.zeros(self.offsets[-1])
        self.v = np.zeros(self.offsets[-1])
        self.t = 0

    def step(self, lr: float) -> None:
        adam_step(self.params, [p.grad for p in self.params], self, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params, grads, state: Adam, lr_t: float) -> None:
    """One update; a parameter whose gradient is ``None`` is treated as zero-gradient."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    g = np.zeros_like(state.m)
    off = state.offsets
    for i, gi in enumerate(grads):
        if gi is not None:
            g[off[i]:off[i + 1]] = gi.reshape(-1)
    state.m *= b1
    state.m += (1.0 - b1) * g
    g *= g
    state.v *= b2
    state.v += (1.0 - b2) * g
    denom = np.sqrt(state.v / c2)
    denom += state.eps
    update = state.m / denom
    update *= lr_t / c1
    for i, p in enumerate(params):
        p.data = p.data - update[off[i]:off[i + 1]].reshape(p.shape)


# ---------------------------------------------------------------------------
# loop


def evaluate(model: DpwModel, dataset: WindowDataset, split: str, batch_size: int = 256) -> dict:
    """MSE/MAE over every window of ``split`` on the standardized scale."""
    x, y = dataset.batch(split)
    pred = predict(model, x, batch_size)
    return {"mse": mse_metric(pred, y), "mae": mae_metric(pred, y), "windows": int(len(x))}


def train_step(model: DpwModel, opt: Adam, x, y, lr: float) -> float:
    opt.zero_grad()
    with Tape() as tape:
        loss = mse_loss(forward(x, model), y)
    value = float(loss.data)
    if not math.isfinite(value):
        return value
    tape.backward(loss)
    opt.step(lr)
    return value


def train(model: DpwModel, dataset: WindowDataset, config: TrainConfig, progress=None,
          final_splits=("train", "val", "test")) -> TrainReport:
    """Fit ``model`` in place with early stopping on validation MSE.

    The parameters of the best validation epoch are restored before
    returning, then ``final_splits`` are evaluated into ``report.final``.
    ``progress`` is an optional callable receiving each :class:`EpochLog`.
    """
    config.validate()
    if dataset.n_windows("train") < 1 or dataset.n_windows("val") < 1:
        raise ConfigError("training needs nonempty train and validation splits")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.beta1, config.beta2, config.adam_eps)
    report = TrainReport()
    best_state = model.state_dict()
    since_best = 0
    n_train = dataset.n_windows("train")

    for epoch in range(config.max_epochs):
        lr = cosine_lr(epoch, config.max_epochs, config.learning_rate, config.eta_min)
        order = rng.permutation(n_train)
        batches = [order[i:i + config.batch_size] for i in range(0, n_train, config.batch_size)]
        if config.max_batches is not None:
            batches = batches[:config.max_batches]
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for b, idx in enumerate(batches):
            x, y = dataset.batch("train", idx)
            loss = train_step(model, opt, x, y, lr)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {b}")
            total += loss * len(idx)
            count += len(idx)
        val = evaluate(model, dataset, "val")["mse"]
        entry = EpochLog(epoch, total / count, val, lr, time.perf_counter() - t0)
        report.epochs.append(entry)
        log.info("epoch %d train %.6f val %.6f lr %.2e", epoch, entry.train_mse, val, lr)
        if progress is not None:
            progress(entry)
        if val < report.best_val_mse:
            report.best_val_mse, report.best_epoch = val, epoch
            best_state = model.state_dict()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                report.stopped_early = True
                break

    model.load_state_dict(best_state)
    for split in final_splits:
        if split in dataset.starts and dataset.n_windows(split):
            report.final[split] = evaluate(model, dataset, split)
    return report


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    worst_index: tuple
    n_checked: int
    per_parameter: dict[str, float]


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(model: DpwModel, x, y, step: float = 1e-5, trainable_only: bool = True) -> GradCheckReport:
    """Compare tape gradients of the MSE loss with central differences, element by element."""
    model.zero_grad()
    with Tape() as tape:
        loss = mse_loss(forward(x, model), y)
    tape.backward(loss)

    def loss_at() -> float:
        return float(mse_loss(forward(x, model), y).data)

    worst = (0.0, "", ())
    per_param = {}
    n = 0
    for name, p in model.named_parameters(trainable_only):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        err = relative_error(analytic, numeric)
        per_param[name] = float(err.max())
        n += err.size
        if err.max() > worst[0]:
            worst = (float(err.max()), name, np.unravel_index(int(err.argmax()), err.shape))
    model.zero_grad()
    return GradCheckReport(worst[0], worst[1], tuple(int(i) for i in worst[2]), n, per_param)
