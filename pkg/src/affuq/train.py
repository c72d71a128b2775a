"""Adam minibatch training of a single classifier head.

Shuffling, parameter initialization, and dropout masks each consume their
own derived random stream, so a run is a pure function of (data, configs,
seed) no matter how the host schedules it.  The per-epoch log keeps the
mean training loss as visited (dropout active) and a mask-free end-of-epoch
accuracy over the training records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Action, Dataset
from .errors import InvalidInputError, TrainingDivergedError
from .model import (
    HeadConfig,
    HeadParams,
    MaskSampler,
    backward,
    forward,
    init_params,
    loss_cross_entropy,
    param_map,
    validate_params,
    zeros_like_params,
)
from .numeric import RngStream


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    ``epochs`` has no default on purpose: convergence horizons vary too much
    across feature extractors for a blanket choice.
    """

    epochs: int
    batch_size: int = 128
    lr0: float = 1e-4
    decay_every_epochs: int = 5
    decay_factor: float = 0.85
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise InvalidInputError(f"lr0 must be positive, got {self.lr0}")
        if self.decay_every_epochs < 1:
            raise InvalidInputError("decay_every_epochs must be >= 1")
        if not 0.0 < self.decay_factor <= 1.0:
            raise InvalidInputError(
                f"decay_factor must be in (0, 1], got {self.decay_factor}"
            )
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 < beta < 1.0:
                raise InvalidInputError(f"{name} must be in (0, 1), got {beta}")
        if self.adam_eps <= 0:
            raise InvalidInputError("adam_eps must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )


@dataclass(frozen=True)
class AdamState:
    """First/second-moment accumulators plus the step counter."""

    m: HeadParams
    v: HeadParams
    t: int = 0

    @classmethod
    def zeros(cls, config: HeadConfig) -> "AdamState":
        return cls(m=zeros_like_params(config), v=zeros_like_params(config), t=0)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Stepwise-decayed learning rate for a given epoch."""
    if epoch < 0:
        raise InvalidInputError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every_epochs)


def adam_step(
    params: HeadParams,
    grads: HeadParams,
    state: AdamState,
    lr: float,
    config: TrainConfig,
) -> tuple[HeadParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if lr <= 0:
        raise InvalidInputError(f"learning rate must be positive, got {lr}")
    for name, arr in grads.arrays().items():
        if arr.shape != getattr(params, name).shape:
            raise InvalidInputError(
                f"gradient {name} has shape {arr.shape}, "
                f"params have {getattr(params, name).shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = state.t + 1
    m = param_map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, state.m, grads)
    v = param_map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, state.v, grads)
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_params = param_map(
        lambda p, m_, v_: p - lr * (m_ / corr1) / (np.sqrt(v_ / corr2) + eps),
        params, m, v,
    )
    return new_params, AdamState(m=m, v=v, t=t)


def _labeled_records(dataset: Dataset, action: Action, num_categories: int):
    records = [r for r in dataset.records if action in r.labels]
    if not records:
        raise InvalidInputError(f"dataset has no labels for action {action.value!r}")
    for rec in records:
        if rec.labels[action] >= num_categories:
            raise InvalidInputError(
                f"record {rec.record_id!r}: label {rec.labels[action]} >= "
                f"num_categories {num_categories}"
            )
    return records


def accuracy(params: HeadParams, records, action: Action) -> float:
    """Mask-free top-1 accuracy over labeled records."""
    hits = 0
    for rec in records:
        trace = forward(params, rec.object_class_id, rec.obj_feat, rec.glob_feat)
        hits += int(np.argmax(trace.probs)) == rec.labels[action]
    return hits / len(records)


def train(
    dataset: Dataset,
    action: Action,
    head_config: HeadConfig,
    train_config: TrainConfig,
    rng: RngStream,
) -> tuple[HeadParams, list[dict]]:
    """Fit one head for one action.

    Returns the final parameters and the per-epoch log (dicts with keys
    ``epoch``, ``lr``, ``mean_loss``, ``train_accuracy``).  Gradients are
    batch means; the last partial batch of an epoch is used.  A non-finite
    loss or gradient aborts with TrainingDivergedError.
    """
    records = _labeled_records(dataset, action, head_config.num_categories)
    n = len(records)

    params = init_params(head_config, rng.derive("init"))
    state = AdamState.zeros(head_config)
    shuffle_gen = rng.derive("shuffle").generator()
    masks = None
    if train_config.dropout_rate > 0.0:
        masks = MaskSampler(head_config, train_config.dropout_rate, rng.derive("dropout"))

    log: list[dict] = []
    for epoch in range(train_config.epochs):
        lr = lr_at(train_config, epoch)
        order = shuffle_gen.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            grad_sum = None
            for idx in batch:
                rec = records[idx]
                label = rec.labels[action]
                mask = masks.next_mask() if masks is not None else None
                trace = forward(
                    params, rec.object_class_id, rec.obj_feat, rec.glob_feat, mask
                )
                loss_sum += loss_cross_entropy(trace.probs, label)
                grad = backward(trace, params, label, mask)
                grad_sum = grad if grad_sum is None else param_map(np.add, grad_sum, grad)
            grad_mean = param_map(lambda a: a / len(batch), grad_sum)
            params, state = adam_step(params, grad_mean, state, lr, train_config)
        mean_loss = loss_sum / n
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(f"epoch {epoch}: mean loss is not finite")
        log.append({
            "epoch": epoch,
            "lr": lr,
            "mean_loss": mean_loss,
            "train_accuracy": accuracy(params, records, action),
        })
    validate_params(params, head_config)
    return params, log


def write_training_log(path, log: list[dict]) -> None:
    """One JSON object per line, in epoch order."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")
