"""Training loop: Adam with decoupled weight decay, early stopping on a
frozen-noise validation loss, deterministic under the config seed."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from survdpm import target_space
from survdpm.denoiser import DenoiserNet, DivergenceError, diffusion_loss, loss_and_grad
from survdpm.schedule import DiffusionSchedule, forward_sample_batch
from survdpm.target_space import TargetTransform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 100
    val_replicas: int = 8
    float32: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be nonnegative")
        if self.val_replicas < 1:
            raise ValueError("val_replicas must be >= 1")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the history so far."""

    def __init__(self, epoch: int, history: dict):
        super().__init__(f"training diverged at epoch {epoch}")
        self.history = history


class AdamOptimizer:
    """Moment-based updates with decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + cfg.adam_eps)
            params[k] -= cfg.learning_rate * (update + cfg.weight_decay * params[k])


def _validation_pack(features, times, events, tf, sched, rng, replicas: int):
    """Freeze the validation noise draws once so epoch-to-epoch comparisons
    are paired rather than re-randomized; replicas shrink the estimate's
    variance without unfreezing it."""
    features = np.tile(features, (replicas, 1))
    times = np.tile(times, replicas)
    events = np.tile(events, replicas)
    tau0 = target_space.encode_batch(times, events, tf, rng)
    indices = rng.integers(1, sched.r + 1, size=tau0.shape[0])
    tau_i, eps = forward_sample_batch(tau0, indices, sched, rng)
    step_values = sched.step_values[indices - 1]
    return features, tau_i, step_values, eps


def _validation_loss(net, pack) -> float:
    features, tau_i, step_values, eps = pack
    eps_hat, _ = net.forward_batch(tau_i, step_values, features)
    loss, _ = diffusion_loss(eps, eps_hat)
    return loss


def train(
    net: DenoiserNet,
    train_data,
    val_data,
    tf: TargetTransform,
    sched: DiffusionSchedule,
    cfg: TrainConfig,
):
    """Optimize the noise-prediction objective.

    ``train_data`` / ``val_data`` are (features, times, events) triples;
    ``val_data`` may be None to disable early stopping. Targets are encoded
    lazily per mini-batch so the censoring component is resampled every time.
    Returns (net, history) with the best-validation parameters restored.
    """
    if cfg.float32:
        net.astype(np.float32)
    rng = np.random.default_rng(cfg.seed)
    features, times, events = (np.asarray(a) for a in train_data)
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty training data")

    val_pack = None
    if val_data is not None and len(val_data[0]) > 0:
        vf, vt, ve = (np.asarray(a) for a in val_data)
        val_pack = _validation_pack(
            vf.astype(net.dtype), vt, ve, tf, sched, rng, cfg.val_replicas
        )

    opt = AdamOptimizer(net.params, cfg)
    history = {"train_loss": [], "val_loss": [], "best_epoch": None, "best_val_loss": None}
    best_params = net.copy_params()
    best_val = np.inf
    best_epoch = 0
    since_best = 0

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            tau0 = target_space.encode_batch(times[idx], events[idx], tf, rng)
            try:
                loss, grads = loss_and_grad(net, tau0, features[idx], sched, rng, train=True)
            except DivergenceError as exc:
                history["train_loss"].append(float("nan"))
                raise TrainingDiverged(epoch, history) from exc
            opt.step(net.params, grads)
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        history["train_loss"].append(epoch_loss)
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, history)

        if val_pack is not None:
            val_loss = _validation_loss(net, val_pack)
            history["val_loss"].append(val_loss)
            if not np.isfinite(val_loss):
                raise TrainingDiverged(epoch, history)
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_params = net.copy_params()
                since_best = 0
            else:
                since_best += 1
                if since_best > cfg.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                    break
        else:
            best_params = net.copy_params()
            best_epoch = epoch

    net.set_params(best_params)
    history["best_epoch"] = best_epoch
    history["best_val_loss"] = float(best_val) if np.isfinite(best_val) else None
    return net, history
