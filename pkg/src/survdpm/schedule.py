"""Cosine variance schedule and the closed-form forward noising process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA_MIN = 1e-5
BETA_MAX = 0.999
DEFAULT_S = 0.008


@dataclass(frozen=True)
class DiffusionSchedule:
    r: int
    s: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    step_values: np.ndarray  # numeric step coordinates fed to the step encoding

    def __post_init__(self):
        for name in ("betas", "alphas", "alpha_bars", "step_values"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)
        if not (len(self.betas) == len(self.alphas) == len(self.alpha_bars) == self.r):
            raise ValueError("schedule arrays must all have length r")


def cosine_schedule(r: int, s: float = DEFAULT_S) -> DiffusionSchedule:
    """Squared-cosine cumulative-signal schedule with offset s.

    f(i) = cos^2(((i/r + s)/(1+s)) * pi/2); betas come from successive ratios
    of f(i)/f(0), clipped to [1e-5, 0.999], and the cumulative products are
    recomputed from the clipped betas so the product identity holds exactly.
    """
    if r < 1:
        raise ValueError("step count r must be >= 1")
    if s <= 0:
        raise ValueError("cosine offset s must be positive")
    i = np.arange(r + 1, dtype=float)
    f = np.cos(((i / r + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    alpha_bar_raw = f / f[0]
    betas = 1.0 - alpha_bar_raw[1:] / alpha_bar_raw[:-1]
    betas = np.clip(betas, BETA_MIN, BETA_MAX)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    step_values = np.arange(1, r + 1, dtype=float)
    return DiffusionSchedule(
        r=r, s=s, betas=betas, alphas=alphas, alpha_bars=alpha_bars, step_values=step_values
    )


def rescale_steps(sched_train: DiffusionSchedule, r_new: int) -> DiffusionSchedule:
    """Fresh cosine schedule with r_new steps whose step coordinates are
    linearly mapped onto the training schedule's numeric range.

    The trained step encoding is functional in the step value, so evaluating
    it at remapped coordinates keeps the conditioning in-distribution.
    """
    fresh = cosine_schedule(r_new, sched_train.s)
    lo = float(sched_train.step_values[0])
    hi = float(sched_train.step_values[-1])
    if r_new == 1:
        mapped = np.array([hi])  # single step plays the top of the chain
    else:
        mapped = lo + (fresh.step_values - 1.0) * (hi - lo) / (r_new - 1.0)
    return DiffusionSchedule(
        r=fresh.r,
        s=fresh.s,
        betas=fresh.betas,
        alphas=fresh.alphas,
        alpha_bars=fresh.alpha_bars,
        step_values=mapped,
    )


def forward_sample(tau0, i: int, sched: DiffusionSchedule, rng: np.random.Generator, eps=None):
    """Sample tau_i | tau_0 in closed form; returns (tau_i, eps).

    ``eps`` can be passed explicitly (test hook); otherwise it is drawn from
    the standard 2-D normal.
    """
    if not 1 <= i <= sched.r:
        raise ValueError(f"step index {i} outside 1..{sched.r}")
    tau0 = np.asarray(tau0, dtype=float)
    if eps is None:
        eps = rng.standard_normal(tau0.shape)
    else:
        eps = np.asarray(eps, dtype=float)
    ab = sched.alpha_bars[i - 1]
    tau_i = np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * eps
    return tau_i, eps


def forward_sample_batch(tau0s, indices, sched: DiffusionSchedule, rng: np.random.Generator):
    """Vectorized forward sampling; one eps row per element, drawn in order."""
    tau0s = np.asarray(tau0s, dtype=float)
    indices = np.asarray(indices, dtype=int)
    if np.any(indices < 1) or np.any(indices > sched.r):
        raise ValueError("step indices outside 1..r")
    eps = rng.standard_normal(tau0s.shape)
    ab = sched.alpha_bars[indices - 1][:, None]
    tau_i = np.sqrt(ab) * tau0s + np.sqrt(1.0 - ab) * eps
    return tau_i, eps
