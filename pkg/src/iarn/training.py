"""End-to-end parameter learning.

One training step: forward passes for a shuffled mini-batch of (user, item)
pairs (each pair's own interaction removed from both sequences), a mean
squared error loss, a backward sweep over the gradient tape, element-wise
gradient clipping, and an RMSprop update. Dropout, when enabled, zeroes
hidden-state units after every recurrence step with inverted scaling so
evaluation needs no rescaling.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .model import ColdStartError, ModelParameters, forward_pair


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message names the offending batch."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 50
    learning_rate: float = 1e-3
    dropout_rate: float = 0.0
    clip_bound: float = 10.0
    seed: int = 0
    rho: float = 0.9
    epsilon: float = 1e-8

    def validate(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")
        return self


class OptimizerState:
    """RMSprop running mean-square accumulators, one per parameter."""

    def __init__(self, params, learning_rate, rho=0.9, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.acc = {name: np.zeros_like(t.data) for name, t in params.items()}


def mse_loss(predictions, targets):
    """Mean squared error between two equal-length vectors."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise nm.ContractError("mse_loss: mismatched or empty inputs %s vs %s"
                               % (predictions.shape, targets.shape))
    diff = predictions - targets
    return float(np.mean(diff * diff))


def clip_gradients(grads, bound):
    """Element-wise clamp of every gradient array to [-bound, +bound]."""
    if bound <= 0:
        raise ValueError("clip bound must be positive")
    return {name: np.clip(g, -bound, bound) for name, g in grads.items()}


def rmsprop_step(params, grads, state):
    """One RMSprop update: s <- rho*s + (1-rho)*g^2; theta -= lr*g/sqrt(s+eps).

    Parameters are updated in place; returns (params, state).
    """
    for name, t in params.items():
        g = grads[name]
        s = state.acc[name]
        s *= state.rho
        s += (1.0 - state.rho) * g * g
        t.data -= state.learning_rate * g / np.sqrt(s + state.epsilon)
    return params, state


def apply_dropout(v, rate, rng, tape=None, training=True):
    """Inverted dropout on a vector tensor.

    Each element survives with probability 1-rate and is scaled by
    1/(1-rate); with rate 0 or outside training this is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if rate == 0.0 or not training:
        return v
    mask = (rng.random(v.data.shape) >= rate) / (1.0 - rate)
    return nm.mul_mask(v, mask, tape)


def train(train_log, user_seqs, item_seqs, taxonomy, model_config, train_config):
    """Fit model parameters on a training log.

    Returns ``(params, history)`` where ``history`` holds the per-epoch mean
    training MSE. Fully deterministic for a fixed seed: the same generator
    drives initialization, shuffling and dropout in a fixed order.
    Instances whose sequences empty out after target exclusion are skipped.
    """
    train_config.validate()
    if not train_log.records:
        raise ValueError("training log is empty")
    rng = np.random.default_rng(train_config.seed)
    params = ModelParameters(model_config, rng)
    state = OptimizerState(params, train_config.learning_rate,
                           train_config.rho, train_config.epsilon)
    instances = [(train_log.user_index[r.user_id], train_log.item_index[r.item_id],
                  r.rating, r.timestamp) for r in train_log.records]
    n = len(instances)
    history = []
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        epoch_se = 0.0
        epoch_count = 0
        for batch_no, start in enumerate(range(0, n, train_config.batch_size)):
            batch = order[start:start + train_config.batch_size]
            tape = nm.GradientTape()
            for _name, t in params.items():
                tape.watch(t)
            cache = {}
            if train_config.dropout_rate > 0.0:
                rate = train_config.dropout_rate
                width = model_config.hidden_dim

                def mask_fn(t_len):
                    return (rng.random((t_len, width)) >= rate) / (1.0 - rate)
            else:
                mask_fn = None
            preds = []
            targets = []
            for idx in batch:
                u, v, r, ts = instances[idx]
                try:
                    fw = forward_pair(
                        u, v, user_seqs, item_seqs, params, taxonomy,
                        tape=tape, exclude_timestamp=ts,
                        prefix_cutoff=ts if model_config.prefix_mode else None,
                        mask_fn=mask_fn, cache=cache)
                except ColdStartError:
                    continue
                preds.append(fw.prediction)
                targets.append(r)
            if not preds:
                continue
            loss = nm.mean_squared_error(preds, targets, tape)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(
                    "non-finite loss in epoch %d, batch %d (%d instances)"
                    % (epoch, batch_no, len(preds)))
            tape.backward(loss)
            grads = {name: t.grad for name, t in params.items()}
            grads = clip_gradients(grads, train_config.clip_bound)
            rmsprop_step(params, grads, state)
            epoch_se += loss_val * len(preds)
            epoch_count += len(preds)
        if epoch_count == 0:
            raise TrainingDivergedError(
                "epoch %d had no trainable instances" % epoch)
        history.append(epoch_se / epoch_count)
    return params, history
