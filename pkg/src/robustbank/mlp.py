"""Three-layer perceptron head with hand-written forward and backward passes.

Hidden layers run linear -> batch-norm -> ReLU -> inverted dropout; the output
layer is linear only and emits one logit per sample. Training arithmetic is
64-bit; the on-disk model stores 32-bit tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import (
    BadMagic,
    DimensionMismatch,
    TrainBatchTooSmall,
    Truncated,
    UnsupportedVersion,
)
from .seeding import splitmix64

BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # running <- 0.9*running + 0.1*batch

MODEL_MAGIC = b"MLPM"
MODEL_VERSION = 1


@dataclass
class MlpParams:
    """Trainable tensors plus batch-norm running statistics.

    ``weights[k]`` is out x in for layer k (two hidden layers then the output
    layer); batch-norm scale/shift and running stats exist for hidden layers
    only.
    """

    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_scale: list[np.ndarray]
    bn_shift: list[np.ndarray]
    run_mean: list[np.ndarray]
    run_var: list[np.ndarray]

    def trainable_tensors(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.bn_scale, *self.bn_shift]

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [g.copy() for g in self.bn_scale],
            [s.copy() for s in self.bn_shift],
            [m.copy() for m in self.run_mean],
            [v.copy() for v in self.run_var],
        )


@dataclass
class Gradients:
    """Gradients for the trainable tensors of :class:`MlpParams`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_scale: list[np.ndarray]
    bn_shift: list[np.ndarray]

    def tensors(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.bn_scale, *self.bn_shift]


@dataclass
class LayerCache:
    x: np.ndarray          # layer input
    pre_norm: np.ndarray   # affine output before batch-norm
    mean: np.ndarray       # batch mean used
    var: np.ndarray        # batch variance used (biased)
    normalized: np.ndarray # (pre_norm - mean) / sqrt(var + eps)
    post_relu: np.ndarray
    mask: np.ndarray       # inverted-dropout mask, entries in {0, 1/(1-p)}


@dataclass
class ForwardCache:
    layers: list[LayerCache]
    logits: np.ndarray

    @property
    def masks(self) -> list[np.ndarray]:
        return [layer.mask for layer in self.layers]


def init_params(dims: Sequence[int], seed: int) -> MlpParams:
    """He-initialized parameters: W ~ N(0, 2/fan_in), biases 0, BN identity."""
    dims = list(dims)
    if len(dims) != 4 or dims[-1] != 1:
        raise ValueError(f"dims must be [d_in, h, h, 1], got {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    hidden = dims[1:3]
    return MlpParams(
        dims,
        weights,
        biases,
        bn_scale=[np.ones(h) for h in hidden],
        bn_shift=[np.zeros(h) for h in hidden],
        run_mean=[np.zeros(h) for h in hidden],
        run_var=[np.ones(h) for h in hidden],
    )


MaskSource = Union[np.random.Generator, Sequence[np.ndarray], None]


def _draw_masks(
    rng_or_masks: MaskSource, shapes: list[tuple[int, int]], dropout_rate: float
) -> list[np.ndarray]:
    if dropout_rate == 0.0:
        return [np.ones(s) for s in shapes]
    if isinstance(rng_or_masks, np.random.Generator):
        keep = 1.0 - dropout_rate
        return [
            (rng_or_masks.random(s) < keep).astype(np.float64) / keep for s in shapes
        ]
    if rng_or_masks is None:
        raise ValueError("dropout_rate > 0 in train mode requires a mask source")
    masks = list(rng_or_masks)
    if [m.shape for m in masks] != shapes:
        raise DimensionMismatch("provided dropout masks have wrong shapes")
    return masks


def forward(
    params: MlpParams,
    batch: np.ndarray,
    mode: str,
    dropout_rate: float = 0.0,
    rng_or_masks: MaskSource = None,
    update_running: bool = False,
) -> tuple[np.ndarray, Optional[ForwardCache]]:
    """Run the network; returns logits and (in train mode) the backprop cache.

    Train mode normalizes with batch statistics and applies inverted dropout;
    eval mode uses running statistics and no dropout. Running stats are only
    touched when ``update_running`` is set (train mode).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise DimensionMismatch(
            f"batch shape {x.shape} incompatible with input dim {params.dims[0]}"
        )
    n = x.shape[0]
    train = mode == "train"
    if train and n < 2:
        raise TrainBatchTooSmall(f"train mode needs >= 2 samples, got {n}")

    if train:
        shapes = [(n, params.dims[1]), (n, params.dims[2])]
        masks = _draw_masks(rng_or_masks, shapes, dropout_rate)

    layers: list[LayerCache] = []
    h = x
    for k in range(2):
        pre = h @ params.weights[k].T + params.biases[k]
        if train:
            mean = pre.mean(axis=0)
            var = pre.var(axis=0)
            if update_running:
                params.run_mean[k] *= 1.0 - BN_MOMENTUM
                params.run_mean[k] += BN_MOMENTUM * mean
                params.run_var[k] *= 1.0 - BN_MOMENTUM
                params.run_var[k] += BN_MOMENTUM * var
        else:
            mean = params.run_mean[k]
            var = params.run_var[k]
        normalized = (pre - mean) / np.sqrt(var + BN_EPS)
        affine = params.bn_scale[k] * normalized + params.bn_shift[k]
        relu = np.maximum(affine, 0.0)
        if train:
            mask = masks[k]
            out = relu * mask
            layers.append(LayerCache(h, pre, mean, var, normalized, relu, mask))
        else:
            out = relu
        h = out
    logits = (h @ params.weights[2].T + params.biases[2]).ravel()
    if not train:
        return logits, None
    cache = ForwardCache(layers, logits)
    return logits, cache


def backward(params: MlpParams, cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    """Exact gradients of any loss whose logit-gradient is ``dlogits``.

    Differentiates through dropout (cached masks), ReLU, the batch-statistics
    batch-norm path, and the linear layers.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    n = dlogits.shape[0]
    if cache.logits.shape != dlogits.shape:
        raise DimensionMismatch(
            f"dlogits shape {dlogits.shape} != cached logits {cache.logits.shape}"
        )
    gW = [None, None, None]
    gb = [None, None, None]
    gscale = [None, None]
    gshift = [None, None]

    # output layer: logits = h2 @ W3.T + b3
    h2 = cache.layers[1].post_relu * cache.layers[1].mask
    dz = dlogits[:, None]
    gW[2] = dz.T @ h2
    gb[2] = dz.sum(axis=0)
    dh = dz @ params.weights[2]

    for k in (1, 0):
        layer = cache.layers[k]
        drelu = dh * layer.mask
        daffine = drelu * (layer.post_relu > 0.0)
        gscale[k] = (daffine * layer.normalized).sum(axis=0)
        gshift[k] = daffine.sum(axis=0)
        dnorm = daffine * params.bn_scale[k]
        inv_std = 1.0 / np.sqrt(layer.var + BN_EPS)
        dpre = (
            inv_std
            / n
            * (
                n * dnorm
                - dnorm.sum(axis=0)
                - layer.normalized * (dnorm * layer.normalized).sum(axis=0)
            )
        )
        gW[k] = dpre.T @ layer.x
        gb[k] = dpre.sum(axis=0)
        dh = dpre @ params.weights[k]

    return Gradients(gW, gb, gscale, gshift)


@dataclass
class TrainedModel:
    """A trained classifier head plus its provenance.

    ``config`` is the training-config snapshot as a plain dict; ``history``
    holds one entry per completed epoch.
    """

    params: MlpParams
    config: dict
    feature_dim: int
    history: list[dict] = field(default_factory=list)

    @property
    def dropout_rate(self) -> float:
        return float(self.config.get("dropout_rate", 0.0))


def predict_proba(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Eval-mode forward followed by the logistic function, clamped to (0,1)."""
    logits, _ = forward(model.params, features, "eval")
    p = expit(logits)
    tiny = np.finfo(np.float64).tiny
    return np.clip(p, tiny, 1.0 - np.finfo(np.float64).eps)


def _write_tensor(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_model(model: TrainedModel, path) -> None:
    """Serialize to the .mlpmodel format (f32 tensors, JSON provenance footer)."""
    p = model.params
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(p.dims)))
        for d in p.dims:
            f.write(struct.pack("<I", d))
        f.write(struct.pack("<f", model.dropout_rate))
        for k in range(3):
            _write_tensor(f, p.weights[k])
            _write_tensor(f, p.biases[k])
            if k < 2:
                _write_tensor(f, p.bn_scale[k])
                _write_tensor(f, p.bn_shift[k])
                _write_tensor(f, p.run_mean[k])
                _write_tensor(f, p.run_var[k])
        footer = json.dumps(
            {
                "config": model.config,
                "feature_dim": model.feature_dim,
                "history": model.history,
            },
            sort_keys=True,
        ).encode("utf-8")
        f.write(struct.pack("<I", len(footer)))
        f.write(footer)


def load_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise Truncated(8, len(data), 0)
    if data[:4] != MODEL_MAGIC:
        raise BadMagic(data[:4], 0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != MODEL_VERSION:
        raise UnsupportedVersion(version)
    offset = 8

    def take(count: int) -> bytes:
        nonlocal offset
        if len(data) - offset < count:
            raise Truncated(count, len(data) - offset, offset)
        chunk = data[offset : offset + count]
        offset += count
        return chunk

    (ndims,) = struct.unpack("<I", take(4))
    dims = [struct.unpack("<I", take(4))[0] for _ in range(ndims)]
    struct.unpack("<f", take(4))  # dropout_rate; authoritative copy in footer

    def tensor(shape) -> np.ndarray:
        count = int(np.prod(shape))
        raw = np.frombuffer(take(4 * count), dtype="<f4")
        return raw.astype(np.float64).reshape(shape)

    weights, biases = [], []
    bn_scale, bn_shift, run_mean, run_var = [], [], [], []
    for k in range(3):
        fan_in, fan_out = dims[k], dims[k + 1]
        weights.append(tensor((fan_out, fan_in)))
        biases.append(tensor((fan_out,)))
        if k < 2:
            bn_scale.append(tensor((fan_out,)))
            bn_shift.append(tensor((fan_out,)))
            run_mean.append(tensor((fan_out,)))
            run_var.append(tensor((fan_out,)))
    (footer_len,) = struct.unpack("<I", take(4))
    footer = json.loads(take(footer_len).decode("utf-8"))
    params = MlpParams(dims, weights, biases, bn_scale, bn_shift, run_mean, run_var)
    return TrainedModel(
        params,
        footer["config"],
        footer["feature_dim"],
        footer["history"],
    )
