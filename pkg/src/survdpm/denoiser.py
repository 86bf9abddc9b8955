"""Conditional noise-prediction network, written directly on numpy.

The backbone is an MLP over the 2-D noisy target. Conditioning (trainable
Fourier features of continuous inputs, categorical embeddings, a sinusoidal
encoding of the diffusion step, optionally the noisy target itself) either
joins the backbone input or, in adaln_zero mode, drives per-layer
(scale, shift, gate) modulation of the normalized hidden activations.
Gradients are computed by hand-written reverse-mode passes so they can be
validated against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from survdpm.schedule import DiffusionSchedule, forward_sample_batch

LN_EPS = 1e-5
NORM_MODES = ("none", "layer", "adaln_zero")
ACTIVATIONS = ("relu", "silu")


class DivergenceError(RuntimeError):
    """Loss became non-finite; carries the offending batch index."""

    def __init__(self, batch_index: int):
        super().__init__(f"non-finite loss contribution at batch index {batch_index}")
        self.batch_index = batch_index


@dataclass(frozen=True)
class FeatureLayout:
    """Column roles of the encoded feature matrix.

    ``numeric_idx`` are positions of standardized continuous columns;
    ``cat_blocks`` are (start, stop) one-hot spans, one per categorical
    feature.
    """

    numeric_idx: tuple[int, ...]
    cat_blocks: tuple[tuple[int, int], ...]
    width: int

    @classmethod
    def from_specs(cls, specs) -> "FeatureLayout":
        numeric = []
        blocks = []
        pos = 0
        for spec in specs:
            if spec.kind in ("time", "event"):
                continue
            if spec.kind == "numeric":
                numeric.append(pos)
                pos += 1
            elif spec.kind == "categorical":
                blocks.append((pos, pos + len(spec.categories)))
                pos += len(spec.categories)
            else:
                raise ValueError(f"unknown column kind {spec.kind!r}")
        return cls(numeric_idx=tuple(numeric), cat_blocks=tuple(blocks), width=pos)

    @property
    def n_numeric(self) -> int:
        return len(self.numeric_idx)


@dataclass(frozen=True)
class NetConfig:
    hidden_layers: int = 3
    hidden_dim: int = 128
    activation: str = "silu"
    norm_mode: str = "none"
    dropout_rate: float = 0.0
    fourier_m: int = 16
    fourier_init_scale: float = 0.3
    cat_embed_dim: int = 8
    step_embed_dim: int = 16
    noise_embed: bool = False

    def __post_init__(self):
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout_rate <= 0.25:
            raise ValueError("dropout_rate must be in [0, 0.25]")
        if self.step_embed_dim < 2 or self.step_embed_dim % 2:
            raise ValueError("step_embed_dim must be an even integer >= 2")
        if self.hidden_layers < 1 or self.hidden_dim < 1 or self.fourier_m < 1:
            raise ValueError("hidden_layers, hidden_dim and fourier_m must be >= 1")


def sinusoidal_encoding(values, dim: int) -> np.ndarray:
    """Interleaved sin/cos features of a numeric coordinate.

    Frequencies fall geometrically from 1 to 1/10^4, transformer style, so the
    encoding stays a smooth function of the coordinate.
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    k = dim // 2
    omega = np.exp(-math.log(1e4) * np.arange(k) / k)
    ang = values[:, None] * omega[None, :]
    out = np.empty((values.size, dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def _sigmoid(z):
    # exp of a large magnitude saturates cleanly; silence the benign overflow
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return z * _sigmoid(z)


def _act_grad(name, z):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    sig = _sigmoid(z)
    return sig * (1.0 + z * (1.0 - sig))


class DenoiserNet:
    """MLP noise predictor with trainable feature encoders.

    Parameters live in ``self.params`` (name -> ndarray); ``forward_batch``
    returns a cache that ``backward`` consumes to produce a gradient dict of
    the same shape.
    """

    def __init__(self, layout: FeatureLayout, cfg: NetConfig, rng: np.random.Generator,
                 dtype=np.float64):
        self.layout = layout
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self._init_params(rng)

    # -- construction -----------------------------------------------------

    @property
    def cond_dim(self) -> int:
        d = self.layout.n_numeric * 2 * self.cfg.fourier_m
        d += len(self.layout.cat_blocks) * self.cfg.cat_embed_dim
        d += self.cfg.step_embed_dim
        if self.cfg.noise_embed:
            d += 2
        return d

    @property
    def backbone_in_dim(self) -> int:
        if self.cfg.norm_mode == "adaln_zero":
            return 2
        return 2 + self.cond_dim

    def _init_params(self, rng: np.random.Generator):
        cfg = self.cfg
        p = self.params
        if self.layout.n_numeric:
            p["fourier_w"] = rng.normal(
                0.0, cfg.fourier_init_scale, (self.layout.n_numeric, cfg.fourier_m)
            )
        for j, (start, stop) in enumerate(self.layout.cat_blocks):
            n_cats = stop - start
            p[f"embed_{j}"] = rng.normal(
                0.0, 1.0 / math.sqrt(cfg.cat_embed_dim), (n_cats, cfg.cat_embed_dim)
            )
        fan_in = self.backbone_in_dim
        for l in range(cfg.hidden_layers):
            p[f"layer{l}_W"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, cfg.hidden_dim))
            p[f"layer{l}_b"] = np.zeros(cfg.hidden_dim)
            if cfg.norm_mode == "layer":
                p[f"ln{l}_gain"] = np.ones(cfg.hidden_dim)
                p[f"ln{l}_bias"] = np.zeros(cfg.hidden_dim)
            elif cfg.norm_mode == "adaln_zero":
                # zero init: every block starts as the bare backbone
                p[f"mod{l}_W"] = np.zeros((self.cond_dim, 3 * cfg.hidden_dim))
                p[f"mod{l}_b"] = np.zeros(3 * cfg.hidden_dim)
            fan_in = cfg.hidden_dim
        p["head_W"] = rng.normal(0.0, math.sqrt(1.0 / fan_in), (fan_in, 2))
        p["head_b"] = np.zeros(2)
        for k in p:
            p[k] = p[k].astype(self.dtype)

    def astype(self, dtype) -> "DenoiserNet":
        self.dtype = np.dtype(dtype)
        for k in self.params:
            self.params[k] = self.params[k].astype(self.dtype)
        return self

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]):
        for k in self.params:
            self.params[k] = params[k].astype(self.dtype)

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- forward ----------------------------------------------------------

    def _conditioning(self, tau, step_values, x):
        """Builds the conditioning vector and the pieces backward needs."""
        cfg = self.cfg
        B = tau.shape[0]
        parts = []
        cache = {"x_cont": None, "ang": None, "onehots": []}
        if self.layout.n_numeric:
            x_cont = x[:, list(self.layout.numeric_idx)]
            ang = 2.0 * np.pi * x_cont[:, :, None] * self.params["fourier_w"][None, :, :]
            feat = np.empty((B, self.layout.n_numeric, 2 * cfg.fourier_m), dtype=tau.dtype)
            feat[:, :, 0::2] = np.sin(ang)
            feat[:, :, 1::2] = np.cos(ang)
            parts.append(feat.reshape(B, -1))
            cache["x_cont"] = x_cont
            cache["ang"] = ang
        for j, (start, stop) in enumerate(self.layout.cat_blocks):
            onehot = x[:, start:stop]
            parts.append(onehot @ self.params[f"embed_{j}"])
            cache["onehots"].append(onehot)
        parts.append(sinusoidal_encoding(step_values, cfg.step_embed_dim).astype(tau.dtype))
        if cfg.noise_embed:
            parts.append(tau)
        c = np.concatenate(parts, axis=1) if parts else np.zeros((B, 0), dtype=tau.dtype)
        return c, cache

    def forward_batch(self, tau, step_values, x, train: bool = False,
                      rng: np.random.Generator | None = None):
        """Returns (eps_hat, cache). Dropout is active only when train=True."""
        cfg = self.cfg
        tau = np.asarray(tau, dtype=self.dtype)
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.layout.width:
            raise ValueError(
                f"feature matrix has width {x.shape[1] if x.ndim == 2 else 'n/a'}, "
                f"expected {self.layout.width}"
            )
        B = tau.shape[0]
        c, cond_cache = self._conditioning(tau, step_values, x)

        if cfg.norm_mode == "adaln_zero":
            a = tau
        else:
            a = np.concatenate([tau, c], axis=1)
        cache = {"c": c, "cond": cond_cache, "a0": a, "layers": [], "B": B}

        use_dropout = train and cfg.dropout_rate > 0.0
        if use_dropout and rng is None:
            raise ValueError("dropout needs an rng stream")

        for l in range(cfg.hidden_layers):
            lc = {"a_prev": a}
            z = a @ self.params[f"layer{l}_W"] + self.params[f"layer{l}_b"]
            h = _act(cfg.activation, z)
            lc["z"] = z
            lc["h"] = h
            if cfg.norm_mode == "layer":
                n, ln_cache = _layernorm(h)
                a = self.params[f"ln{l}_gain"] * n + self.params[f"ln{l}_bias"]
                lc["n"] = n
                lc["ln"] = ln_cache
            elif cfg.norm_mode == "adaln_zero":
                mod = c @ self.params[f"mod{l}_W"] + self.params[f"mod{l}_b"]
                sc, sh, ga = np.split(mod, 3, axis=1)
                n, ln_cache = _layernorm(h)
                u = n * (1.0 + sc) + sh
                a = h + ga * u
                lc.update(n=n, ln=ln_cache, sc=sc, ga=ga, u=u)
            else:
                a = h
            if use_dropout:
                mask = (rng.random(a.shape) >= cfg.dropout_rate).astype(a.dtype)
                a = a * mask / (1.0 - cfg.dropout_rate)
                lc["mask"] = mask
            cache["layers"].append(lc)
        cache["a_last"] = a
        eps_hat = a @ self.params["head_W"] + self.params["head_b"]
        return eps_hat, cache

    def forward(self, tau_i, step_value, x):
        """Single-sample inference-mode forward pass."""
        eps_hat, _ = self.forward_batch(
            np.asarray(tau_i, dtype=float)[None, :],
            np.atleast_1d(step_value),
            np.asarray(x, dtype=float)[None, :],
        )
        return eps_hat[0]

    # -- backward ---------------------------------------------------------

    def backward(self, cache, g_out) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(eps_hat)."""
        cfg = self.cfg
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        g_out = np.asarray(g_out, dtype=self.dtype)

        grads["head_W"] += cache["a_last"].T @ g_out
        grads["head_b"] += g_out.sum(axis=0)
        dA = g_out @ self.params["head_W"].T
        dC = np.zeros_like(cache["c"])

        for l in reversed(range(cfg.hidden_layers)):
            lc = cache["layers"][l]
            if "mask" in lc:
                dA = dA * lc["mask"] / (1.0 - cfg.dropout_rate)
            if cfg.norm_mode == "layer":
                grads[f"ln{l}_gain"] += (dA * lc["n"]).sum(axis=0)
                grads[f"ln{l}_bias"] += dA.sum(axis=0)
                dN = dA * self.params[f"ln{l}_gain"]
                dH = _layernorm_backward(dN, lc["n"], lc["ln"])
            elif cfg.norm_mode == "adaln_zero":
                dGa = dA * lc["u"]
                dU = dA * lc["ga"]
                dSc = dU * lc["n"]
                dSh = dU
                dN = dU * (1.0 + lc["sc"])
                dMod = np.concatenate([dSc, dSh, dGa], axis=1)
                grads[f"mod{l}_W"] += cache["c"].T @ dMod
                grads[f"mod{l}_b"] += dMod.sum(axis=0)
                dC += dMod @ self.params[f"mod{l}_W"].T
                dH = dA + _layernorm_backward(dN, lc["n"], lc["ln"])
            else:
                dH = dA
            dZ = dH * _act_grad(cfg.activation, lc["z"])
            grads[f"layer{l}_W"] += lc["a_prev"].T @ dZ
            grads[f"layer{l}_b"] += dZ.sum(axis=0)
            dA = dZ @ self.params[f"layer{l}_W"].T

        if cfg.norm_mode != "adaln_zero":
            dC += dA[:, 2:]
        self._conditioning_backward(dC, cache["cond"], grads)
        return grads

    def _conditioning_backward(self, dC, cond_cache, grads):
        cfg = self.cfg
        pos = 0
        if self.layout.n_numeric:
            width = self.layout.n_numeric * 2 * cfg.fourier_m
            dFeat = dC[:, pos:pos + width].reshape(-1, self.layout.n_numeric, 2 * cfg.fourier_m)
            ang = cond_cache["ang"]
            dAng = dFeat[:, :, 0::2] * np.cos(ang) - dFeat[:, :, 1::2] * np.sin(ang)
            grads["fourier_w"] += (
                2.0 * np.pi * (dAng * cond_cache["x_cont"][:, :, None]).sum(axis=0)
            )
            pos += width
        for j, onehot in enumerate(cond_cache["onehots"]):
            e = cfg.cat_embed_dim
            grads[f"embed_{j}"] += onehot.T @ dC[:, pos:pos + e]
            pos += e
        # step encoding and the appended noisy target carry no parameters


def _layernorm(h):
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    n = (h - mu) * inv
    return n, inv


def _layernorm_backward(dN, n, inv):
    m1 = dN.mean(axis=1, keepdims=True)
    m2 = (dN * n).mean(axis=1, keepdims=True)
    return inv * (dN - m1 - n * m2)


def diffusion_loss(eps, eps_hat):
    """Mean over the batch of the squared 2-D noise residual; also returns
    d(loss)/d(eps_hat)."""
    eps = np.asarray(eps)
    eps_hat = np.asarray(eps_hat)
    B = eps.shape[0]
    per_element = ((eps - eps_hat) ** 2).sum(axis=1)
    if not np.all(np.isfinite(per_element)):
        raise DivergenceError(int(np.argmin(np.isfinite(per_element))))
    loss = float(per_element.mean())
    g_out = 2.0 * (eps_hat - eps) / B
    return loss, g_out


def loss_and_grad(net: DenoiserNet, tau0s, xs, sched: DiffusionSchedule,
                  rng: np.random.Generator, train: bool = False):
    """Noise-prediction MSE on a batch and its parameter gradients.

    Per element: a uniform step index, a forward-noised target, and the
    squared error between drawn and predicted noise, averaged over the batch.
    """
    tau0s = np.asarray(tau0s, dtype=float)
    xs = np.asarray(xs, dtype=float)
    if tau0s.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    indices = rng.integers(1, sched.r + 1, size=tau0s.shape[0])
    tau_i, eps = forward_sample_batch(tau0s, indices, sched, rng)
    step_values = sched.step_values[indices - 1]
    eps_hat, cache = net.forward_batch(tau_i, step_values, xs, train=train, rng=rng)
    loss, g_out = diffusion_loss(eps, eps_hat)
    grads = net.backward(cache, g_out)
    return loss, grads
