"""Gated recurrent regression network, implemented from scratch in numpy.

Architecture: a GRU, LSTM or BiLSTM layer over the 168 x 11 feature
sequence, last-step readout, a 256-node dense layer, ReLU, inverted
dropout, and a single-output dense layer trained with mean squared error.
Forward, backward (full backpropagation through time, no truncation) and
the weight container all live here; the training loop is in
dampid.training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from dampid import tensorio

CELL_KINDS = ("gru", "lstm", "bilstm")
_GATES = {"gru": 3, "lstm": 4, "bilstm": 4}


@dataclass(frozen=True)
class ModelSpec:
    cell_kind: str
    input_size: int = 168
    hidden_size: int = 256  # per direction
    fc1_size: int = 256
    dropout_rate: float = 0.5
    output_size: int = 1

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {CELL_KINDS}, got {self.cell_kind!r}")
        for name in ("input_size", "hidden_size", "fc1_size", "output_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def bidirectional(self) -> bool:
        return self.cell_kind == "bilstm"

    @property
    def gate_count(self) -> int:
        return _GATES[self.cell_kind]

    @property
    def cell_output_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fw", "bw") if self.bidirectional else ("fw",)


def expected_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    g, h, i = spec.gate_count, spec.hidden_size, spec.input_size
    shapes: dict[str, tuple[int, ...]] = {}
    for d in spec.directions:
        shapes[f"{d}.W"] = (g * h, i)
        shapes[f"{d}.R"] = (g * h, h)
        shapes[f"{d}.b"] = (g * h,)
    shapes["fc1.W"] = (spec.fc1_size, spec.cell_output_size)
    shapes["fc1.b"] = (spec.fc1_size,)
    shapes["fc2.W"] = (spec.output_size, spec.fc1_size)
    shapes["fc2.b"] = (spec.output_size,)
    return shapes


@dataclass
class ModelWeights:
    spec: ModelSpec
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        want = expected_shapes(self.spec)
        if set(self.tensors) != set(want):
            raise ValueError(
                f"tensor names {sorted(self.tensors)} do not match spec "
                f"{sorted(want)}"
            )
        for name, shape in want.items():
            if self.tensors[name].shape != shape:
                raise ValueError(
                    f"{name}: shape {self.tensors[name].shape}, expected {shape}"
                )

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(
            self.spec, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.spec, {k: v.copy() for k, v in self.tensors.items()})


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_weights(spec: ModelSpec, seed: int, dtype=np.float64) -> ModelWeights:
    """Glorot input/dense weights, orthogonal recurrent blocks, zero biases
    (LSTM forget gate biased to 1). Deterministic per seed."""
    rng = np.random.default_rng(seed)
    g, h, i = spec.gate_count, spec.hidden_size, spec.input_size
    tensors: dict[str, np.ndarray] = {}
    for d in spec.directions:
        tensors[f"{d}.W"] = np.vstack(
            [_glorot(rng, (h, i), i, h) for _ in range(g)]
        )
        tensors[f"{d}.R"] = np.vstack([_orthogonal(rng, h) for _ in range(g)])
        b = np.zeros(g * h)
        if spec.cell_kind in ("lstm", "bilstm"):
            b[h : 2 * h] = 1.0  # forget gate (gate order: i, f, g, o)
        tensors[f"{d}.b"] = b
    tensors["fc1.W"] = _glorot(
        rng, (spec.fc1_size, spec.cell_output_size), spec.cell_output_size, spec.fc1_size
    )
    tensors["fc1.b"] = np.zeros(spec.fc1_size)
    tensors["fc2.W"] = _glorot(
        rng, (spec.output_size, spec.fc1_size), spec.fc1_size, spec.output_size
    )
    tensors["fc2.b"] = np.zeros(spec.output_size)
    return ModelWeights(spec, {k: v.astype(dtype) for k, v in tensors.items()})


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _run_gru(W, R, b, xs):
    """xs: (T, B, I). Returns the final h and a stacked activation cache.

    The input projection xs @ W.T is hoisted out of the time loop into one
    matmul over all steps; only the recurrent part stays sequential.
    """
    H = R.shape[1]
    T, B, _ = xs.shape
    h = np.zeros((B, H), dtype=xs.dtype)
    Rg, Rc = R[: 2 * H], R[2 * H :]
    bg, bc = b[: 2 * H], b[2 * H :]
    pre_x = (xs.reshape(T * B, -1) @ W.T).reshape(T, B, -1)
    hp = np.empty((T, B, H), dtype=xs.dtype)
    zs = np.empty_like(hp)
    rs = np.empty_like(hp)
    rhs = np.empty_like(hp)
    hcs = np.empty_like(hp)
    for t in range(T):
        pre = pre_x[t, :, : 2 * H] + h @ Rg.T + bg
        z = _sigmoid(pre[:, :H])
        r = _sigmoid(pre[:, H:])
        rh = r * h
        hc = np.tanh(pre_x[t, :, 2 * H :] + rh @ Rc.T + bc)
        hp[t], zs[t], rs[t], rhs[t], hcs[t] = h, z, r, rh, hc
        h = (1.0 - z) * h + z * hc
    return h, {"xs": xs, "h_prev": hp, "z": zs, "r": rs, "rh": rhs, "hc": hcs}


def _run_lstm(W, R, b, xs):
    H = R.shape[1]
    T, B, _ = xs.shape
    h = np.zeros((B, H), dtype=xs.dtype)
    c = np.zeros((B, H), dtype=xs.dtype)
    pre_x = (xs.reshape(T * B, -1) @ W.T).reshape(T, B, -1)
    hp = np.empty((T, B, H), dtype=xs.dtype)
    cp = np.empty_like(hp)
    gates = np.empty((T, B, 4 * H), dtype=xs.dtype)
    tcs = np.empty_like(hp)
    for t in range(T):
        pre = pre_x[t] + h @ R.T + b
        i = _sigmoid(pre[:, :H])
        f = _sigmoid(pre[:, H : 2 * H])
        g = np.tanh(pre[:, 2 * H : 3 * H])
        o = _sigmoid(pre[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        hp[t], cp[t], tcs[t] = h, c, tc
        gates[t, :, :H], gates[t, :, H : 2 * H] = i, f
        gates[t, :, 2 * H : 3 * H], gates[t, :, 3 * H :] = g, o
        h = o * tc
        c = c_new
    return h, {"xs": xs, "h_prev": hp, "c_prev": cp, "gates": gates, "tc": tcs}


def cell_step(kind: str, W, R, b, x_t, state):
    """Single recurrent step. state: h for GRU, (h, c) for LSTM."""
    xs = np.asarray(x_t)[None, :, :] if np.asarray(x_t).ndim == 2 else np.asarray(x_t)[None, None, :]
    if kind == "gru":
        h = np.atleast_2d(state)
        H = R.shape[1]
        x = xs[0]
        pre = x @ W[: 2 * H].T + h @ R[: 2 * H].T + b[: 2 * H]
        z = _sigmoid(pre[:, :H])
        r = _sigmoid(pre[:, H:])
        hc = np.tanh(x @ W[2 * H :].T + (r * h) @ R[2 * H :].T + b[2 * H :])
        return (1.0 - z) * h + z * hc
    if kind in ("lstm", "bilstm"):
        h, c = state
        h, c = np.atleast_2d(h), np.atleast_2d(c)
        H = R.shape[1]
        x = xs[0]
        pre = x @ W.T + h @ R.T + b
        i = _sigmoid(pre[:, :H])
        f = _sigmoid(pre[:, H : 2 * H])
        g = np.tanh(pre[:, 2 * H : 3 * H])
        o = _sigmoid(pre[:, 3 * H :])
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new
    raise ValueError(f"unknown cell kind {kind!r}")


def forward(
    weights: ModelWeights,
    batch: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
):
    """Predict zeta for a batch of (168, 11) feature tensors.

    batch: (B, input_size, T). Returns (predictions (B,), cache) where the
    cache is None in eval mode. Train mode needs an rng when dropout_rate
    is nonzero.
    """
    spec = weights.spec
    batch = np.asarray(batch)
    if batch.ndim == 2:
        batch = batch[None]
    if batch.ndim != 3 or batch.shape[1] != spec.input_size:
        raise ValueError(
            f"batch must be (B, {spec.input_size}, T), got {batch.shape}"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    t = weights.tensors
    xs = np.ascontiguousarray(batch.transpose(2, 0, 1))  # (T, B, I)

    run = _run_gru if spec.cell_kind == "gru" else _run_lstm
    h_fw, cache_fw = run(t["fw.W"], t["fw.R"], t["fw.b"], xs)
    if spec.bidirectional:
        h_bw, cache_bw = run(t["bw.W"], t["bw.R"], t["bw.b"], xs[::-1])
        readout = np.concatenate([h_fw, h_bw], axis=1)
    else:
        h_bw, cache_bw = None, None
        readout = h_fw

    z1 = readout @ t["fc1.W"].T + t["fc1.b"]
    a1 = np.maximum(z1, 0.0)
    if mode == "train" and spec.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode forward with dropout requires an rng")
        keep = 1.0 - spec.dropout_rate
        mask = (rng.random(a1.shape) < keep).astype(a1.dtype) / keep
    else:
        mask = None
    dropped = a1 if mask is None else a1 * mask
    preds = (dropped @ t["fc2.W"].T + t["fc2.b"])[:, 0]

    if mode == "eval":
        return preds, None
    cache = {
        "weights": weights,
        "xs": xs,
        "cell_caches": {"fw": cache_fw, "bw": cache_bw},
        "readout": readout,
        "z1": z1,
        "mask": mask,
        "dropped": dropped,
        "preds": preds,
    }
    return preds, cache


def mse_loss(preds: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error, accumulated in float64."""
    diff = preds.astype(np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(diff * diff))


def _backward_lstm(W, R, cache, d_final):
    H = R.shape[1]
    xs, hp, cp = cache["xs"], cache["h_prev"], cache["c_prev"]
    gates, tcs = cache["gates"], cache["tc"]
    T, B, I = xs.shape
    dz_all = np.empty((T, B, 4 * H), dtype=W.dtype)
    dh = d_final
    dc = np.zeros_like(d_final)
    for t in reversed(range(T)):
        i, f = gates[t, :, :H], gates[t, :, H : 2 * H]
        g, o = gates[t, :, 2 * H : 3 * H], gates[t, :, 3 * H :]
        tc = tcs[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = (dc * g) * i * (1.0 - i)
        dz[:, H : 2 * H] = (dc * cp[t]) * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = (dc * i) * (1.0 - g * g)
        dz[:, 3 * H :] = do * o * (1.0 - o)
        dh = dz @ R
        dc = dc * f
    flat = dz_all.reshape(T * B, 4 * H)
    gW = flat.T @ xs.reshape(T * B, I)
    gR = flat.T @ hp.reshape(T * B, H)
    gb = flat.sum(axis=0)
    return gW, gR, gb


def _backward_gru(W, R, cache, d_final):
    H = R.shape[1]
    xs, hp = cache["xs"], cache["h_prev"]
    zs, rs, rhs, hcs = cache["z"], cache["r"], cache["rh"], cache["hc"]
    T, B, I = xs.shape
    Rg, Rc = R[: 2 * H], R[2 * H :]
    dzg_all = np.empty((T, B, 2 * H), dtype=W.dtype)
    dpc_all = np.empty((T, B, H), dtype=W.dtype)
    dh = d_final
    for t in reversed(range(T)):
        z, r, rh, hc, h_prev = zs[t], rs[t], rhs[t], hcs[t], hp[t]
        dhc = dh * z
        dz_gate = dh * (hc - h_prev)
        dh_prev = dh * (1.0 - z)
        dpre_c = dhc * (1.0 - hc * hc)
        dpc_all[t] = dpre_c
        drh = dpre_c @ Rc
        dh_prev += drh * r
        dr_gate = drh * h_prev
        dzg = dzg_all[t]
        dzg[:, :H] = dz_gate * z * (1.0 - z)
        dzg[:, H:] = dr_gate * r * (1.0 - r)
        dh = dh_prev + dzg @ Rg
    gW = np.empty_like(W)
    gR = np.empty_like(R)
    gb = np.empty(W.shape[0], dtype=W.dtype)
    flat_g = dzg_all.reshape(T * B, 2 * H)
    flat_c = dpc_all.reshape(T * B, H)
    gW[: 2 * H] = flat_g.T @ xs.reshape(T * B, I)
    gR[: 2 * H] = flat_g.T @ hp.reshape(T * B, H)
    gb[: 2 * H] = flat_g.sum(axis=0)
    gW[2 * H :] = flat_c.T @ xs.reshape(T * B, I)
    gR[2 * H :] = flat_c.T @ rhs.reshape(T * B, H)
    gb[2 * H :] = flat_c.sum(axis=0)
    return gW, gR, gb


def backward(cache: dict, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Exact MSE-loss gradients for every weight, via full BPTT."""
    weights: ModelWeights = cache["weights"]
    spec = weights.spec
    t = weights.tensors
    preds = cache["preds"]
    targets = np.asarray(targets, dtype=preds.dtype)
    if targets.shape != preds.shape:
        raise ValueError(f"targets shape {targets.shape} != predictions {preds.shape}")
    B = preds.shape[0]

    dpred = (2.0 / B) * (preds - targets)
    dz2 = dpred[:, None]
    grads: dict[str, np.ndarray] = {}
    grads["fc2.W"] = dz2.T @ cache["dropped"]
    grads["fc2.b"] = dz2.sum(axis=0)
    dd = dz2 @ t["fc2.W"]
    da1 = dd if cache["mask"] is None else dd * cache["mask"]
    dz1 = da1 * (cache["z1"] > 0)
    grads["fc1.W"] = dz1.T @ cache["readout"]
    grads["fc1.b"] = dz1.sum(axis=0)
    dread = dz1 @ t["fc1.W"]

    back = _backward_gru if spec.cell_kind == "gru" else _backward_lstm
    H = spec.hidden_size
    d_fw = dread[:, :H]
    gW, gR, gb = back(t["fw.W"], t["fw.R"], cache["cell_caches"]["fw"], d_fw)
    grads["fw.W"], grads["fw.R"], grads["fw.b"] = gW, gR, gb
    if spec.bidirectional:
        d_bw = dread[:, H:]
        gW, gR, gb = back(t["bw.W"], t["bw.R"], cache["cell_caches"]["bw"], d_bw)
        grads["bw.W"], grads["bw.R"], grads["bw.b"] = gW, gR, gb
    return grads


class WeightsFormatError(tensorio.ContainerError):
    """Weights file does not match the requested model spec."""


def save_weights(weights: ModelWeights, path, extra_header: Optional[dict] = None) -> None:
    header = {"model_spec": asdict(weights.spec)}
    if extra_header:
        header.update(extra_header)
    tensorio.save_named_tensors(path, header, weights.tensors)


def load_weights(path, expect_cell_kind: Optional[str] = None) -> ModelWeights:
    header, tensors = tensorio.load_named_tensors(path)
    try:
        spec = ModelSpec(**header["model_spec"])
    except (KeyError, TypeError) as exc:
        raise WeightsFormatError(f"{path}: missing or malformed model spec header") from exc
    if expect_cell_kind is not None and spec.cell_kind != expect_cell_kind:
        raise WeightsFormatError(
            f"{path}: contains a {spec.cell_kind} model, expected {expect_cell_kind}"
        )
    try:
        return ModelWeights(spec, tensors)
    except ValueError as exc:
        raise WeightsFormatError(f"{path}: {exc}") from exc


def load_weights_header(path) -> dict:
    header, _ = tensorio.load_named_tensors(path)
    return header
