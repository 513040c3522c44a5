"""SGD-with-momentum training loop and learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dampid import nn


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 45
    initial_lr: float = 5e-4
    momentum: float = 0.9
    lr_drop_every: int = 15
    lr_drop_factor: float = 0.1
    # explicit drop epochs; when set, overrides the fixed-interval rule
    # (used for the long extended-dataset run: drops after epochs 50 and 100)
    lr_milestones: Optional[tuple[int, ...]] = None
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "initial_lr": self.initial_lr,
            "momentum": self.momentum,
            "lr_drop_every": self.lr_drop_every,
            "lr_drop_factor": self.lr_drop_factor,
            "lr_milestones": list(self.lr_milestones) if self.lr_milestones else None,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if doc.get("lr_milestones") is not None:
            doc["lr_milestones"] = tuple(doc["lr_milestones"])
        return cls(**doc)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate in effect during a 1-based epoch."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if cfg.lr_milestones is not None:
        drops = sum(1 for m in cfg.lr_milestones if epoch > m)
    else:
        drops = (epoch - 1) // cfg.lr_drop_every
    return cfg.initial_lr * cfg.lr_drop_factor**drops


def sgd_momentum_step(weights, grads, velocity, lr: float, momentum: float):
    """v' = momentum*v + g; w' = w - lr*v'. Updates arrays in place."""
    for name, w in weights.tensors.items():
        g = grads[name]
        v = velocity[name]
        v *= momentum
        v += g
        w -= lr * v
    return weights, velocity


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)


def evaluate_mse(weights: nn.ModelWeights, x: np.ndarray, y: np.ndarray,
                 batch_size: int = 1024) -> float:
    preds = predict(weights, x, batch_size=batch_size)
    return nn.mse_loss(preds, y)


def predict(weights: nn.ModelWeights, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode predictions for an (N, F, T) array, batched."""
    out = []
    for lo in range(0, x.shape[0], batch_size):
        preds, _ = nn.forward(weights, x[lo : lo + batch_size], mode="eval")
        out.append(preds)
    return np.concatenate(out)


def train(
    spec: nn.ModelSpec,
    cfg: TrainConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: Optional[np.ndarray] = None,
    val_y: Optional[np.ndarray] = None,
    dtype=np.float32,
    log_fn=None,
) -> tuple[nn.ModelWeights, TrainHistory]:
    """Train a model; fully deterministic for fixed (cfg.seed, data).

    train_x: (N, input_size, T); train_y: (N,). Weights and arithmetic are
    float32 by default; per-epoch losses are accumulated in float64.
    """
    if train_x.shape[0] == 0:
        raise ValueError("training set is empty")
    train_x = np.asarray(train_x, dtype=dtype)
    train_y = np.asarray(train_y, dtype=dtype)
    weights = nn.init_weights(spec, seed=cfg.seed, dtype=dtype)
    velocity = {k: np.zeros_like(v) for k, v in weights.tensors.items()}
    shuffle_rng = np.random.default_rng([cfg.seed, 0xDA7A])
    dropout_rng = np.random.default_rng([cfg.seed, 0xD120])
    history = TrainHistory()
    n = train_x.shape[0]

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_schedule(epoch, cfg)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            preds, cache = nn.forward(weights, train_x[idx], mode="train", rng=dropout_rng)
            batch_loss = nn.mse_loss(preds, train_y[idx])
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {lo} (lr={lr:g})"
                )
            loss_sum += batch_loss * idx.size
            grads = nn.backward(cache, train_y[idx])
            sgd_momentum_step(weights, grads, velocity, lr, cfg.momentum)
        epoch_loss = loss_sum / n
        history.train_loss.append(epoch_loss)
        history.lr.append(lr)
        if val_x is not None and val_x.shape[0] > 0:
            history.val_loss.append(evaluate_mse(weights, np.asarray(val_x, dtype=dtype),
                                                 val_y))
        if log_fn is not None:
            val_txt = f", val mse {history.val_loss[-1]:.3e}" if history.val_loss else ""
            log_fn(f"epoch {epoch:3d}/{cfg.epochs}: lr {lr:.2e}, "
                   f"train mse {epoch_loss:.3e}{val_txt}")
    return weights, history
