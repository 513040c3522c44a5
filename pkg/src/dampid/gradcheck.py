"""Finite-difference verification of the analytic BPTT gradients."""

from __future__ import annotations

import numpy as np

from dampid import nn

DEFAULT_EPS = 1e-5


def _loss(weights: nn.ModelWeights, x: np.ndarray, y: np.ndarray) -> float:
    preds, _ = nn.forward(weights, x, mode="eval")
    return nn.mse_loss(preds, y)


def finite_difference_grads(
    weights: nn.ModelWeights, x: np.ndarray, y: np.ndarray, eps: float = DEFAULT_EPS
) -> dict[str, np.ndarray]:
    """Central-difference loss gradients, one parameter at a time."""
    grads = {}
    for name, w in weights.tensors.items():
        g = np.zeros_like(w)
        flat_w = w.ravel()
        flat_g = g.ravel()
        for j in range(flat_w.size):
            orig = flat_w[j]
            flat_w[j] = orig + eps
            up = _loss(weights, x, y)
            flat_w[j] = orig - eps
            down = _loss(weights, x, y)
            flat_w[j] = orig
            flat_g[j] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> float:
    worst = 0.0
    for name in analytic:
        a = analytic[name].ravel()
        b = numeric[name].ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-5)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def check_cell(
    cell_kind: str,
    seed: int,
    *,
    hidden_size: int = 8,
    input_size: int = 6,
    seq_len: int = 3,
    batch_size: int = 4,
    eps: float = DEFAULT_EPS,
) -> float:
    """Run one randomized check in float64 with dropout off.

    Returns the max relative error between BPTT and central differences.
    """
    spec = nn.ModelSpec(
        cell_kind=cell_kind,
        input_size=input_size,
        hidden_size=hidden_size,
        fc1_size=hidden_size,
        dropout_rate=0.0,
    )
    rng = np.random.default_rng(seed)
    weights = nn.init_weights(spec, seed=seed, dtype=np.float64)
    # break init symmetries (zero biases) so every gradient path is exercised
    for name, w in weights.tensors.items():
        w += 0.1 * rng.standard_normal(w.shape)
    x = rng.standard_normal((batch_size, input_size, seq_len))
    y = rng.uniform(0.1, 0.8, size=batch_size)
    _, cache = nn.forward(weights, x, mode="train")
    analytic = nn.backward(cache, y)
    numeric = finite_difference_grads(weights, x, y, eps=eps)
    return max_relative_error(analytic, numeric)
