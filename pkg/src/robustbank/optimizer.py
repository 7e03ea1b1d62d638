"""The training loop: CVaR batch objective, sign-based SAM, Adam, cosine LR.

Per batch: forward at theta with fresh dropout masks; binary-search the CVaR
threshold on the batch losses; backward with active-sample weighting; build
the sign perturbation; second forward/backward at theta+eps reusing the same
masks and threshold (running stats update on this pass only); restore theta
and apply the optimizer step with the perturbed-point gradient.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import robust_loss
from .errors import DimensionMismatch, NonFiniteLoss, UnlabeledInput
from .featurebank import FeatureBank
from .mlp import (
    Gradients,
    MlpParams,
    TrainedModel,
    backward,
    forward,
    init_params,
)
from .seeding import splitmix64

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.9
    gamma: float = 0.05
    lr: float = 1e-3
    lr_min: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    dropout_rate: float = 0.3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_tol: float = 1e-9
    hidden_dim: Optional[int] = None  # defaults to the bank's feature_dim
    update_rule: str = "adam"  # "sgd" gives the literal plain-gradient update
    sam_enabled: bool = True

    def validate(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0,1], got {self.alpha}")
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.lr_min <= self.lr):
            raise ValueError("lr_min must satisfy 0 <= lr_min <= lr")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch-norm)")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not (0 <= self.dropout_rate < 1):
            raise ValueError("dropout_rate must be in [0,1)")
        if self.lambda_tol <= 0:
            raise ValueError("lambda_tol must be positive")
        if self.update_rule not in ("adam", "sgd"):
            raise ValueError(f"unknown update_rule {self.update_rule!r}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: MlpParams) -> "AdamState":
        tensors = params.trainable_tensors()
        return cls(
            [np.zeros_like(x) for x in tensors],
            [np.zeros_like(x) for x in tensors],
        )


@dataclass
class Perturbation:
    """Sign perturbation with entries in {-gamma, 0, +gamma} per tensor."""

    tensors: list[np.ndarray]


@dataclass
class TrainInstrumentation:
    """Counters and optional captures for loop-structure assertions."""

    forward_passes: int = 0
    backward_passes: int = 0
    lambda_searches: int = 0
    capture_weights: bool = False
    weight_vectors: list[np.ndarray] = field(default_factory=list)


def sam_perturbation(grads: Gradients, gamma: float) -> Perturbation:
    """Entrywise gamma * sign(gradient); sign(0) is 0. Trainable tensors only."""
    return Perturbation([gamma * np.sign(g) for g in grads.tensors()])


def adam_step(
    state: AdamState,
    params: MlpParams,
    grads: Gradients,
    lr: float,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, mutating state and params in place."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    tensors = params.trainable_tensors()
    gs = grads.tensors()
    if len(tensors) != len(gs) or any(t.shape != g.shape for t, g in zip(tensors, gs)):
        raise DimensionMismatch("gradient shapes do not match parameters")
    state.t += 1
    bc1 = 1.0 - config.adam_beta1**state.t
    bc2 = 1.0 - config.adam_beta2**state.t
    for x, g, m, v in zip(tensors, gs, state.m, state.v):
        m *= config.adam_beta1
        m += (1.0 - config.adam_beta1) * g
        v *= config.adam_beta2
        v += (1.0 - config.adam_beta2) * g * g
        x -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)


def cosine_lr(step: int, total_steps: int, lr: float, lr_min: float) -> float:
    """Half-cosine decay from lr at step 0 to lr_min at step == total_steps."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} out of range [0, {total_steps}]")
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def _batch_weights(
    losses: np.ndarray, lam: float, alpha: float
) -> np.ndarray:
    # alpha == 1 is the exact ERM arm: uniform 1/n, equivalent to a threshold
    # strictly below the minimum loss.
    if alpha >= 1.0:
        return np.full(losses.shape, 1.0 / losses.size)
    return robust_loss.cvar_active_weights(losses, lam, alpha)


def train(
    bank: FeatureBank,
    config: TrainConfig,
    history_path=None,
    instrumentation: Optional[TrainInstrumentation] = None,
) -> TrainedModel:
    """Train the classifier head on a labeled bank; deterministic per seed."""
    config.validate()
    if not bank.labeled:
        raise UnlabeledInput("training requires a labeled bank")
    if len(bank) == 0:
        raise UnlabeledInput("training requires a nonempty bank")
    hidden = config.hidden_dim if config.hidden_dim else bank.feature_dim
    dims = [bank.feature_dim, hidden, hidden, 1]
    params = init_params(dims, splitmix64(config.seed, 0))
    shuffle_rng = np.random.default_rng(splitmix64(config.seed, 1))
    mask_rng = np.random.default_rng(splitmix64(config.seed, 2))

    X = bank.features.astype(np.float64)
    y = bank.labels.astype(np.float64)
    n = len(bank)
    adam = AdamState.init_like(params)
    history: list[dict] = []
    inst = instrumentation

    history_file = open(history_path, "w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(config.epochs):
            lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)
            perm = shuffle_rng.permutation(n)
            batch_values: list[float] = []
            batch_lambdas: list[float] = []
            batch_active: list[float] = []
            for batch_index, start in enumerate(range(0, n, config.batch_size)):
                idx = perm[start : start + config.batch_size]
                if idx.size < 2:
                    logger.info(
                        "dropping undersized final batch (%d samples) at epoch %d",
                        idx.size,
                        epoch,
                    )
                    continue
                xb, yb = X[idx], y[idx]

                logits, cache = forward(
                    params, xb, "train", config.dropout_rate, mask_rng
                )
                losses = robust_loss.bce_per_sample(logits, yb)
                if not np.isfinite(losses).all():
                    raise NonFiniteLoss(epoch, batch_index)
                sol = robust_loss.cvar_lambda_search(
                    losses, config.alpha, config.lambda_tol
                )
                weights = _batch_weights(losses, sol.lam, config.alpha)
                grads = backward(
                    params, cache, weights * robust_loss.bce_logit_grad(logits, yb)
                )
                if inst is not None:
                    inst.forward_passes += 1
                    inst.backward_passes += 1
                    inst.lambda_searches += 1
                    if inst.capture_weights:
                        inst.weight_vectors.append(weights.copy())

                eps = sam_perturbation(grads, config.gamma)
                saved = [t.copy() for t in params.trainable_tensors()]
                if config.sam_enabled:
                    for t, e in zip(params.trainable_tensors(), eps.tensors):
                        t += e

                # second pass: same masks, same lambda; running stats track the
                # pass whose gradient is applied
                logits2, cache2 = forward(
                    params,
                    xb,
                    "train",
                    config.dropout_rate,
                    cache.masks,
                    update_running=True,
                )
                losses2 = robust_loss.bce_per_sample(logits2, yb)
                if not np.isfinite(losses2).all():
                    raise NonFiniteLoss(epoch, batch_index)
                weights2 = _batch_weights(losses2, sol.lam, config.alpha)
                grads2 = backward(
                    params, cache2, weights2 * robust_loss.bce_logit_grad(logits2, yb)
                )
                if inst is not None:
                    inst.forward_passes += 1
                    inst.backward_passes += 1

                for t, s in zip(params.trainable_tensors(), saved):
                    t[...] = s

                if config.update_rule == "adam":
                    adam_step(adam, params, grads2, lr, config)
                else:
                    for t, g in zip(params.trainable_tensors(), grads2.tensors()):
                        t -= lr * g

                batch_values.append(sol.value)
                batch_lambdas.append(sol.lam)
                batch_active.append(sol.active_count / idx.size)

            entry = {
                "epoch": epoch,
                "mean_cvar_loss": float(np.mean(batch_values)) if batch_values else None,
                "mean_lambda": float(np.mean(batch_lambdas)) if batch_lambdas else None,
                "active_fraction": float(np.mean(batch_active)) if batch_active else None,
                "lr": lr,
            }
            if entry["mean_cvar_loss"] is not None and not math.isfinite(
                entry["mean_cvar_loss"]
            ):
                raise NonFiniteLoss(epoch, -1)
            history.append(entry)
            if history_file:
                history_file.write(json.dumps(entry, sort_keys=True) + "\n")
    finally:
        if history_file:
            history_file.close()

    return TrainedModel(params, asdict(config), bank.feature_dim, history)
