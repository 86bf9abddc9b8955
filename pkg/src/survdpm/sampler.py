"""Reverse-diffusion generation of conditional outcome samples.

Each of the K requested outcome pairs for a subject comes from its own
reverse trajectory started at standard normal noise. All of a trajectory's
noise is read from a pre-drawn block indexed by trajectory number, so results
are bit-reproducible no matter how trajectories are batched or parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from survdpm import target_space
from survdpm.denoiser import DenoiserNet
from survdpm.schedule import DiffusionSchedule
from survdpm.target_space import TargetTransform


@dataclass(frozen=True)
class GeneratedOutcomes:
    """K generated (time, event) pairs for one subject."""

    times: np.ndarray
    deltas: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "deltas", np.asarray(self.deltas, dtype=int))
        if self.times.shape != self.deltas.shape:
            raise ValueError("times and deltas must align")

    @property
    def k(self) -> int:
        return int(self.times.size)


def reverse_step(net: DenoiserNet, tau_i, i: int, sched: DiffusionSchedule,
                 x, rng: np.random.Generator, eps=None):
    """One denoising transition tau_i -> tau_{i-1}.

    The additive noise is suppressed on the final transition (i = 1) so the
    decoded target is deterministic given tau_1.
    """
    if not 1 <= i <= sched.r:
        raise ValueError(f"step index {i} outside 1..{sched.r}")
    tau_i = np.asarray(tau_i, dtype=float)
    alpha = sched.alphas[i - 1]
    beta = sched.betas[i - 1]
    alpha_bar = sched.alpha_bars[i - 1]
    eps_hat = net.forward(tau_i, sched.step_values[i - 1], x)
    out = (tau_i - (beta / np.sqrt(1.0 - alpha_bar)) * eps_hat) / np.sqrt(alpha)
    if i > 1:
        if eps is None:
            eps = rng.standard_normal(tau_i.shape)
        out = out + np.sqrt(beta) * np.asarray(eps, dtype=float)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite latent at reverse step {i}")
    return out


def _reverse_chain_batch(net, x, noise_block, sched):
    """Run K reverse trajectories at once; noise_block is (K, r+1, 2) with
    row k holding trajectory k's initial state and per-step noise."""
    K = noise_block.shape[0]
    tau = noise_block[:, 0, :].copy()
    xs = np.broadcast_to(np.asarray(x, dtype=float), (K, np.asarray(x).size))
    for i in range(sched.r, 0, -1):
        alpha = sched.alphas[i - 1]
        beta = sched.betas[i - 1]
        alpha_bar = sched.alpha_bars[i - 1]
        step_vals = np.full(K, sched.step_values[i - 1])
        eps_hat, _ = net.forward_batch(tau, step_vals, xs)
        tau = (tau - (beta / np.sqrt(1.0 - alpha_bar)) * eps_hat) / np.sqrt(alpha)
        if i > 1:
            tau = tau + np.sqrt(beta) * noise_block[:, sched.r - i + 1, :]
        if not np.all(np.isfinite(tau)):
            raise FloatingPointError(f"non-finite latent at reverse step {i}")
    return tau


def generate(net: DenoiserNet, x, K: int, sched: DiffusionSchedule,
             tf: TargetTransform, rng: np.random.Generator) -> GeneratedOutcomes:
    """K conditional outcome pairs for one subject.

    Trajectory k consumes row k of one up-front standard-normal block (initial
    state plus one noise vector per step), so the result is independent of how
    the trajectories are executed and stable under changes of K prefix-wise.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    noise_block = rng.standard_normal((K, sched.r + 1, 2))
    tau0 = _reverse_chain_batch(net, x, noise_block, sched)
    times, deltas = target_space.decode_batch(tau0, tf)
    return GeneratedOutcomes(times=times, deltas=deltas, features=np.asarray(x, dtype=float))


def generation_diagnostics(out: GeneratedOutcomes, t_max: float):
    """Event-rate and validity diagnostics of a generated sample set.

    Returns (generated event rate, fraction with t < 0, fraction with
    t > 2 * t_max) where t_max is the maximum observed training time.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    k = out.k
    gen_event_rate = float((out.deltas == 1).sum() / k)
    neg_rate = float((out.times < 0).sum() / k)
    range_exceed_rate = float((out.times > 2.0 * t_max).sum() / k)
    return gen_event_rate, neg_rate, range_exceed_rate
