"""Training engine: MSE objective, Adam with gradient clipping, shuffled
mini-batches, early stopping on validation loss, MSE/MAE evaluation.

Losses and metrics are computed on the dataset's standardized scale (the
usual benchmark convention); the model's own instance normalization is
internal and orthogonal to this.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass

import numpy as np

from .datasets import WindowedDataset
from .model import Forecaster
from .tensorops import Rng, ShapeError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    clip_norm: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < self.beta2 < 1.0):
            raise ValueError("need 0 < beta1 < beta2 < 1")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")


@dataclass
class Metrics:
    mse: float
    mae: float
    n_samples: int


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


def mse_loss(yhat: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient wrt yhat."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ShapeError(f"mse_loss: shape mismatch {yhat.shape} vs {y.shape}")
    diff = yhat - y
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


def clip_gradients(grads: dict[str, np.ndarray],
                   clip_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients so the global L2 norm is at most clip_norm."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= clip_norm:
        return grads
    scale = clip_norm / total
    return {name: g * scale for name, g in grads.items()}


class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig,
              masks: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place.

    Block-diagonal masks are re-applied to the masked gradients so frozen
    recurrent entries stay exactly zero through the whole run.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if masks is not None and name in masks:
            g = g * masks[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = config.learning_rate * (m / corr1) / (np.sqrt(v / corr2)
                                                     + config.eps_opt)
        if masks is not None and name in masks:
            step = step * masks[name]
        p -= step


def _batches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def _split_loss(model: Forecaster, dataset: WindowedDataset, split: str,
                batch_size: int) -> float:
    total, count = 0.0, 0
    n = dataset.n_windows(split)
    for lo in range(0, n, batch_size):
        x, y = dataset.batch(split, range(lo, min(lo + batch_size, n)))
        yhat, _ = model.forward(x)
        total += float(np.sum((yhat - y) ** 2))
        count += y.size
    return total / count


def train(model: Forecaster, dataset: WindowedDataset,
          config: TrainConfig) -> tuple[Forecaster, list[EpochRecord]]:
    """Train with early stopping; returns the best-validation-epoch model.

    If the train loss goes non-finite the run aborts and the last finite
    best checkpoint is returned.
    """
    if dataset.n_windows("train") == 0 or dataset.n_windows("val") == 0:
        raise ValueError("train requires non-empty train and val splits")
    opt = AdamState(model.params)
    history: list[EpochRecord] = []
    best_val = np.inf
    best_params = copy.deepcopy(model.params)
    stale = 0
    n_train = dataset.n_windows("train")

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        shuffle_rng = Rng(config.seed).spawn(1000 + epoch)
        drop_rng = Rng(config.seed).spawn(2000 + epoch)
        diverged = False
        for idx in _batches(n_train, config.batch_size, shuffle_rng):
            x, y = dataset.batch("train", idx)
            yhat, tape = model.forward(x, training=True, dropout_rng=drop_rng)
            loss, grad = mse_loss(yhat, y)
            if not np.isfinite(loss):
                diverged = True
                break
            grads = model.backward(tape, grad)
            grads = clip_gradients(grads, config.clip_norm)
            adam_step(model.params, grads, opt, config, model.masks)
        if diverged:
            break
        train_mse = _split_loss(model, dataset, "train", config.batch_size)
        val_mse = _split_loss(model, dataset, "val", config.batch_size)
        history.append(EpochRecord(epoch, train_mse, val_mse,
                                   time.perf_counter() - t0))
        if val_mse < best_val:
            best_val = val_mse
            best_params = copy.deepcopy(model.params)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    for name, arr in model.params.items():
        arr[...] = best_params[name]
    return model, history


def evaluate(model: Forecaster, dataset: WindowedDataset,
             split: str = "test", batch_size: int = 64) -> Metrics:
    """MSE/MAE over every window of the split, on the standardized scale."""
    n = dataset.n_windows(split)
    if n == 0:
        raise ValueError(f"evaluate: split {split!r} is empty")
    se, ae, count = 0.0, 0.0, 0
    for lo in range(0, n, batch_size):
        x, y = dataset.batch(split, range(lo, min(lo + batch_size, n)))
        yhat, _ = model.forward(x)
        diff = yhat - y
        se += float(np.sum(diff * diff))
        ae += float(np.sum(np.abs(diff)))
        count += y.size
    return Metrics(mse=se / count, mae=ae / count, n_samples=n)


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "val_mse", "seconds"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_mse),
                             repr(rec.val_mse), f"{rec.seconds:.3f}"])


# -- naive reference forecasters ------------------------------------------

def persistence_metrics(dataset: WindowedDataset, split: str = "test") -> Metrics:
    """Repeat the last observed value across the horizon."""
    n = dataset.n_windows(split)
    se, ae, count = 0.0, 0.0, 0
    for lo in range(0, n, 256):
        x, y = dataset.batch(split, range(lo, min(lo + 256, n)))
        yhat = np.repeat(x[:, -1:, :], y.shape[1], axis=1)
        diff = yhat - y
        se += float(np.sum(diff * diff))
        ae += float(np.sum(np.abs(diff)))
        count += y.size
    return Metrics(mse=se / count, mae=ae / count, n_samples=n)


def train_mean_metrics(dataset: WindowedDataset, split: str = "test") -> Metrics:
    """Predict the per-channel mean of the train split (zero after z-scoring
    unless channels were constant)."""
    n = dataset.n_windows(split)
    mean = dataset.train_channel_mean()
    se, ae, count = 0.0, 0.0, 0
    for lo in range(0, n, 256):
        _, y = dataset.batch(split, range(lo, min(lo + 256, n)))
        diff = y - mean[None, None, :]
        se += float(np.sum(diff * diff))
        ae += float(np.sum(np.abs(diff)))
        count += y.size
    return Metrics(mse=se / count, mae=ae / count, n_samples=n)
