"""Parallel-branch 1D CNN with handcrafted-feature fusion, in plain numpy.

Activations are kept time-major, shape (batch, time, channels). Convolutions
use stride 1 and 'same' zero padding; weights have layout
(out_channels, in_channels, kernel).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import CheckpointMismatch, InvalidConfig, LengthMismatch, ShapeMismatch, SingleClassOnly

PROB_CLAMP = 1e-7
CHECKPOINT_VERSION = 1

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    in_rows: int = 39
    stem_channels: int = 32
    stem_kernel: int = 3
    branch_channels: int = 32
    branch_kernels: Tuple[int, ...] = (3, 5, 7)
    handcrafted_dim: int = 11
    hidden_dense: int = 64
    classes: int = 2
    use_mfcc: bool = True

    def __post_init__(self):
        object.__setattr__(self, "branch_kernels", tuple(int(k) for k in self.branch_kernels))
        if len(self.branch_kernels) != 3:
            raise InvalidConfig("the network has exactly three parallel branches")
        for k in (self.stem_kernel,) + self.branch_kernels:
            if k < 1 or k % 2 == 0:
                raise InvalidConfig(f"kernel sizes must be odd, got {k}")
        if self.classes != 2:
            raise InvalidConfig("only the two-class head is supported")
        dims = (self.in_rows, self.stem_channels, self.branch_channels, self.hidden_dense)
        if min(dims) < 1 or self.handcrafted_dim < 0:
            raise InvalidConfig(f"layer sizes must be positive: {self}")
        if self.fused_dim == 0:
            raise InvalidConfig("the model needs MFCC input or at least one handcrafted feature")

    @property
    def fused_dim(self) -> int:
        deep = 3 * self.branch_channels if self.use_mfcc else 0
        return deep + self.handcrafted_dim

    @property
    def min_frames(self) -> int:
        return max(self.branch_kernels + (self.stem_kernel,))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_kernels"] = list(self.branch_kernels)
        return d


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig("learning rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidConfig("batch_size, max_epochs and patience must be >= 1")


def param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes = []
    if config.use_mfcc:
        shapes += [
            ("stem.weight", (config.stem_channels, config.in_rows, config.stem_kernel)),
            ("stem.bias", (config.stem_channels,)),
        ]
        for j, k in enumerate(config.branch_kernels):
            shapes += [
                (f"branch{j}.weight", (config.branch_channels, config.stem_channels, k)),
                (f"branch{j}.bias", (config.branch_channels,)),
            ]
    shapes += [
        ("dense1.weight", (config.fused_dim, config.hidden_dense)),
        ("dense1.bias", (config.hidden_dense,)),
        ("dense2.weight", (config.hidden_dense, config.classes)),
        ("dense2.bias", (config.classes,)),
    ]
    return shapes


def init_model(config: ModelConfig, seed: int = 0) -> Params:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(config):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] if len(shape) == 3 else shape[0]
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (B, T, C) -> (B, T, O); returns output and the im2col matrix."""
    B, T, C = x.shape
    O, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).reshape(B * T, C * k)
    out = cols @ w.reshape(O, C * k).T + b
    return out.reshape(B, T, O), cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    B, T, C = x_shape
    O, _, k = w.shape
    pad = (k - 1) // 2
    d2 = dout.reshape(B * T, O)
    dw = (d2.T @ cols).reshape(O, C, k)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(O, C * k)).reshape(B, T, C, k)
    dxp = np.zeros((B, T + 2 * pad, C))
    for i in range(k):
        dxp[:, i:i + T, :] += dcols[:, :, :, i]
    return dxp[:, pad:pad + T, :], dw, db


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: Params, config: ModelConfig, mfcc: Optional[np.ndarray], handcrafted: Optional[np.ndarray], return_cache=False):
    """Class probabilities, shape (B, 2); column 1 is CHD.

    `mfcc` has shape (B, rows, T) and `handcrafted` (B, handcrafted_dim);
    handcrafted values are expected to be already standardized.
    """
    cache = {}
    parts = []
    if config.use_mfcc:
        mfcc = np.asarray(mfcc, dtype=np.float64)
        if mfcc.ndim != 3 or mfcc.shape[1] != config.in_rows:
            raise ShapeMismatch(f"mfcc must be (B, {config.in_rows}, T), got {mfcc.shape}")
        if mfcc.shape[2] < config.min_frames:
            raise ShapeMismatch(f"need at least {config.min_frames} frames, got {mfcc.shape[2]}")
        x = np.ascontiguousarray(mfcc.transpose(0, 2, 1))
        a0, cols0 = _conv_forward(x, params["stem.weight"], params["stem.bias"])
        h0 = np.maximum(a0, 0.0)
        cache.update(x_shape=x.shape, cols0=cols0, a0=a0, h0=h0, branches=[])
        for j in range(3):
            aj, colsj = _conv_forward(h0, params[f"branch{j}.weight"], params[f"branch{j}.bias"])
            hj = np.maximum(aj, 0.0)
            cache["branches"].append((colsj, aj))
            parts.append(hj.mean(axis=1))
    if config.handcrafted_dim:
        hand = np.asarray(handcrafted, dtype=np.float64)
        if hand.ndim != 2 or hand.shape[1] != config.handcrafted_dim:
            raise ShapeMismatch(f"handcrafted must be (B, {config.handcrafted_dim}), got {hand.shape}")
        parts.append(hand)
    if len({len(part) for part in parts}) != 1:
        raise LengthMismatch("mfcc and handcrafted batches differ in size")
    fused = np.concatenate(parts, axis=1)

    a1 = fused @ params["dense1.weight"] + params["dense1.bias"]
    r1 = np.maximum(a1, 0.0)
    logits = r1 @ params["dense2.weight"] + params["dense2.bias"]
    probs = softmax(logits)
    if return_cache:
        cache.update(fused=fused, a1=a1, r1=r1, probs=probs)
        return probs, cache
    return probs


def class_weights(labels) -> np.ndarray:
    """Balanced class weights ``W_i = K / (N * n_i)`` indexed by class (0=NonCHD, 1=CHD)."""
    y = np.asarray(labels).astype(np.int64)
    counts = np.bincount(y, minlength=2)
    if len(counts) != 2 or counts.min() == 0:
        raise SingleClassOnly("class weights need both classes present")
    return len(y) / (2.0 * counts)


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def weighted_bce(probs_pos, labels, weights) -> float:
    """Mean over the batch of ``W[y] * (-y ln p - (1-y) ln(1-p))``; `weights` is ``(W_0, W_1)``."""
    p = _clamped(np.asarray(probs_pos, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} probabilities vs {y.shape} labels")
    w = _sample_weights(weights, y)
    return float(np.mean(w * -(y * np.log(p) + (1 - y) * np.log(1 - p))))


def _sample_weights(weights, y: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (2,):
        raise LengthMismatch(f"expected one weight per class (NonCHD, CHD), got shape {w.shape}")
    return w[y.astype(np.int64)]


def loss_and_grad(params: Params, config: ModelConfig, mfcc, handcrafted, labels, weights):
    """Weighted BCE over the batch and its exact gradient for every parameter."""
    y = np.asarray(labels, dtype=np.float64)
    probs, c = forward(params, config, mfcc, handcrafted, return_cache=True)
    B = probs.shape[0]
    if len(y) != B:
        raise LengthMismatch(f"{len(y)} labels for a batch of {B}")
    w = _sample_weights(weights, y)
    p_raw = probs[:, 1]
    p = _clamped(p_raw)
    loss = float(np.mean(w * -(y * np.log(p) + (1 - y) * np.log(1 - p))))

    inside = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
    dp = np.where(inside, w * (-y / p + (1 - y) / (1 - p)) / B, 0.0)
    # p = softmax(z)[1]  =>  dp/dz1 = p0 p1, dp/dz0 = -p0 p1
    g = dp * probs[:, 0] * probs[:, 1]
    dlogits = np.stack([-g, g], axis=1)

    grads: Params = {}
    grads["dense2.weight"] = c["r1"].T @ dlogits
    grads["dense2.bias"] = dlogits.sum(axis=0)
    da1 = (dlogits @ params["dense2.weight"].T) * (c["a1"] > 0)
    grads["dense1.weight"] = c["fused"].T @ da1
    grads["dense1.bias"] = da1.sum(axis=0)

    if config.use_mfcc:
        dfused = da1 @ params["dense1.weight"].T
        B_, T, _ = c["x_shape"]
        C = config.branch_channels
        dh0 = np.zeros_like(c["h0"])
        for j, (colsj, aj) in enumerate(c["branches"]):
            dg = dfused[:, j * C:(j + 1) * C]
            daj = np.broadcast_to(dg[:, None, :] / T, aj.shape) * (aj > 0)
            dhj, dw, db = _conv_backward(daj, colsj, params[f"branch{j}.weight"], c["h0"].shape)
            grads[f"branch{j}.weight"] = dw
            grads[f"branch{j}.bias"] = db
            dh0 += dhj
        da0 = dh0 * (c["a0"] > 0)
        _, dw, db = _conv_backward(da0, c["cols0"], params["stem.weight"], c["x_shape"])
        grads["stem.weight"] = dw
        grads["stem.bias"] = db
    return loss, {name: grads[name] for name in params}


class Adam:
    def __init__(self, params: Params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def to_float32(params: Params) -> Params:
    """Round parameters to float32 precision (kept as float64 arrays)."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def save_checkpoint(
    directory,
    params: Params,
    config: ModelConfig,
    train_config: Optional[TrainConfig] = None,
    extra: Optional[dict] = None,
) -> None:
    """Write ``model.json`` and ``weights.bin`` (row-major float32 little-endian)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    blobs = []
    for name, shape in param_shapes(config):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        if arr.shape != shape:
            raise ShapeMismatch(f"{name}: expected {shape}, got {arr.shape}")
        tensors.append({"name": name, "shape": list(shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
        "train_config": asdict(train_config) if train_config is not None else None,
        "parameters": tensors,
    }
    doc.update(extra or {})
    (directory / "weights.bin").write_bytes(b"".join(blobs))
    (directory / "model.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(directory):
    """Return ``(params, model_config, document)``."""
    directory = Path(directory)
    try:
        doc = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        blob = (directory / "weights.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointMismatch(f"cannot read checkpoint in {directory}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {doc.get('format_version')!r}")
    config = ModelConfig(**doc["model_config"])
    params: Params = {}
    for t in doc["parameters"]:
        shape = tuple(t["shape"])
        n = int(np.prod(shape))
        raw = blob[t["offset"]:t["offset"] + 4 * n]
        if len(raw) != 4 * n:
            raise CheckpointMismatch(f"weights.bin too short for {t['name']}")
        params[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    expected = [name for name, _ in param_shapes(config)]
    if list(params) != expected:
        raise CheckpointMismatch("checkpoint tensors do not match the model config")
    return params, config, doc
