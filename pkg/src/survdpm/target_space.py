"""Transforms between observed outcomes (t, delta) and the diffusion targets.

Times are log-standardized; the binary censoring indicator is lifted to a
continuous value drawn from a two-component Gaussian mixture (one component
per label), resampled fresh on every encode call. The ablated mode trains on
raw times and a fixed {-1, +1} label encoding instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# smallest positive normal double; exp() underflow is clamped here so decoded
# times stay strictly positive for any finite latent
_TINY_TIME = np.finfo(float).tiny

MODE_TRANSFORMED = "transformed"
MODE_RAW = "raw_ablation"


@dataclass(frozen=True)
class TargetTransform:
    mu: float
    sigma: float
    mixture_mean: float = 1.0
    mixture_var: float = 0.25
    mode: str = MODE_TRANSFORMED

    def __post_init__(self):
        if self.mode not in (MODE_TRANSFORMED, MODE_RAW):
            raise ValueError(f"unknown transform mode: {self.mode!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.mixture_var <= 0:
            raise ValueError("mixture variance must be positive")

    @property
    def mixture_std(self) -> float:
        return float(np.sqrt(self.mixture_var))


def fit(times, mode: str = MODE_TRANSFORMED) -> TargetTransform:
    """Fit the log-time standardization on training times (population std)."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two times to fit the transform")
    if np.any(times <= 0) or np.any(~np.isfinite(times)):
        raise ValueError("all times must be positive and finite")
    log_t = np.log(times)
    mu = float(log_t.mean())
    sigma = float(log_t.std())
    if sigma == 0.0:
        raise ValueError("all times equal: log-time std is zero")
    return TargetTransform(mu=mu, sigma=sigma, mode=mode)


def encode(t: float, delta: int, tf: TargetTransform, rng: np.random.Generator):
    """Map one observation into target space; the label draw is fresh per call."""
    if t <= 0:
        raise ValueError("time must be positive")
    if tf.mode == MODE_RAW:
        return float(t), float(2 * delta - 1)
    t_tilde = (np.log(t) - tf.mu) / tf.sigma
    center = tf.mixture_mean if delta == 1 else -tf.mixture_mean
    delta_tilde = center + tf.mixture_std * rng.standard_normal()
    return float(t_tilde), float(delta_tilde)


def encode_batch(times, deltas, tf: TargetTransform, rng: np.random.Generator) -> np.ndarray:
    """Vectorized encode: returns an (n, 2) array of (t_tilde, delta_tilde).

    One mixture draw per row per call, so repeated calls resample the label
    component (the per-mini-batch resampling contract).
    """
    times = np.asarray(times, dtype=float)
    deltas = np.asarray(deltas, dtype=int)
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    out = np.empty((times.size, 2))
    if tf.mode == MODE_RAW:
        out[:, 0] = times
        out[:, 1] = 2 * deltas - 1
        return out
    out[:, 0] = (np.log(times) - tf.mu) / tf.sigma
    centers = np.where(deltas == 1, tf.mixture_mean, -tf.mixture_mean)
    out[:, 1] = centers + tf.mixture_std * rng.standard_normal(times.size)
    return out


def decode(t_tilde: float, delta_tilde: float, tf: TargetTransform):
    """Invert the encoding: exp back to the time scale, label by sign.

    A latent tied at exactly zero decodes to delta = 0.
    """
    if not (np.isfinite(t_tilde) and np.isfinite(delta_tilde)):
        raise ValueError("latent values must be finite")
    delta = 1 if delta_tilde > 0 else 0
    if tf.mode == MODE_RAW:
        return float(t_tilde), delta
    with np.errstate(over="ignore"):
        t = float(np.exp(tf.sigma * t_tilde + tf.mu))
    return max(t, _TINY_TIME), delta


def decode_batch(latents, tf: TargetTransform):
    """Vectorized decode of an (n, 2) latent array -> (times, deltas)."""
    latents = np.asarray(latents, dtype=float)
    if np.any(~np.isfinite(latents)):
        raise ValueError("latent values must be finite")
    deltas = (latents[:, 1] > 0).astype(int)
    if tf.mode == MODE_RAW:
        return latents[:, 0].copy(), deltas
    with np.errstate(over="ignore"):
        times = np.exp(tf.sigma * latents[:, 0] + tf.mu)
    return np.maximum(times, _TINY_TIME), deltas
