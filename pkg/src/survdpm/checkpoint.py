"""Self-describing model checkpoints.

A checkpoint is a zip of little-endian ``.npy`` arrays (numpy's container
format records dtype byte order explicitly) plus a JSON metadata entry
holding the format version, schema hash, transform and schedule fields, the
architecture description, and a training summary. Everything needed to
sample and evaluate is inside: parameters, preprocessing statistics, and the
training outcomes that define the evaluation grid and censoring weights.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile

import numpy as np

from survdpm.dataset import ColumnSpec, Preprocessor
from survdpm.denoiser import DenoiserNet, FeatureLayout, NetConfig
from survdpm.schedule import DiffusionSchedule
from survdpm.target_space import TargetTransform

FORMAT_VERSION = 1
_META_NAME = "meta.json"


class CheckpointError(RuntimeError):
    pass


def schema_hash(specs) -> str:
    """Stable digest of the encoded column layout."""
    payload = [
        {"name": s.name, "kind": s.kind, "categories": list(s.categories)} for s in specs
    ]
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _spec_to_dict(spec: ColumnSpec) -> dict:
    return {"name": spec.name, "kind": spec.kind, "categories": list(spec.categories)}


def _spec_from_dict(d: dict) -> ColumnSpec:
    return ColumnSpec(d["name"], d["kind"], tuple(d["categories"]))


def save(
    path,
    net: DenoiserNet,
    tf: TargetTransform,
    sched: DiffusionSchedule,
    pre: Preprocessor,
    train_times,
    train_events,
    training_summary: dict | None = None,
):
    meta = {
        "format_version": FORMAT_VERSION,
        "schema_hash": schema_hash(pre.specs),
        "columns": [_spec_to_dict(s) for s in pre.specs],
        "numeric_stats": {k: list(v) for k, v in pre.numeric_stats.items()},
        "transform": {
            "mu": tf.mu,
            "sigma": tf.sigma,
            "mixture_mean": tf.mixture_mean,
            "mixture_var": tf.mixture_var,
            "mode": tf.mode,
        },
        "schedule": {"r": sched.r, "s": sched.s},
        "architecture": {
            "hidden_layers": net.cfg.hidden_layers,
            "hidden_dim": net.cfg.hidden_dim,
            "activation": net.cfg.activation,
            "norm_mode": net.cfg.norm_mode,
            "dropout_rate": net.cfg.dropout_rate,
            "fourier_m": net.cfg.fourier_m,
            "fourier_init_scale": net.cfg.fourier_init_scale,
            "cat_embed_dim": net.cfg.cat_embed_dim,
            "step_embed_dim": net.cfg.step_embed_dim,
            "noise_embed": net.cfg.noise_embed,
        },
        "param_names": sorted(net.params),
        "training_summary": training_summary or {},
    }
    arrays = {f"param.{k}": v for k, v in net.params.items()}
    arrays["schedule.betas"] = np.asarray(sched.betas)
    arrays["schedule.step_values"] = np.asarray(sched.step_values)
    arrays["train.times"] = np.asarray(train_times, dtype=float)
    arrays["train.events"] = np.asarray(train_events, dtype=np.int64)

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(_META_NAME, json.dumps(meta, indent=2, sort_keys=True))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            # force little-endian on disk regardless of host order
            np.save(buf, np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")))
            zf.writestr(f"{name}.npy", buf.getvalue())


class LoadedCheckpoint:
    def __init__(self, meta, arrays):
        self.meta = meta
        self.arrays = arrays

    @property
    def schema_hash(self) -> str:
        return self.meta["schema_hash"]

    @property
    def specs(self) -> tuple[ColumnSpec, ...]:
        return tuple(_spec_from_dict(d) for d in self.meta["columns"])

    @property
    def preprocessor(self) -> Preprocessor:
        stats = {k: tuple(v) for k, v in self.meta["numeric_stats"].items()}
        return Preprocessor(specs=self.specs, numeric_stats=stats)

    @property
    def transform(self) -> TargetTransform:
        t = self.meta["transform"]
        return TargetTransform(
            mu=t["mu"], sigma=t["sigma"], mixture_mean=t["mixture_mean"],
            mixture_var=t["mixture_var"], mode=t["mode"],
        )

    @property
    def schedule(self) -> DiffusionSchedule:
        betas = self.arrays["schedule.betas"]
        alphas = 1.0 - betas
        return DiffusionSchedule(
            r=int(self.meta["schedule"]["r"]),
            s=float(self.meta["schedule"]["s"]),
            betas=betas,
            alphas=alphas,
            alpha_bars=np.cumprod(alphas),
            step_values=self.arrays["schedule.step_values"],
        )

    @property
    def net(self) -> DenoiserNet:
        arch = self.meta["architecture"]
        cfg = NetConfig(**arch)
        layout = FeatureLayout.from_specs(self.specs)
        net = DenoiserNet(layout, cfg, np.random.default_rng(0))
        params = {k[len("param."):]: v for k, v in self.arrays.items() if k.startswith("param.")}
        missing = set(net.params) ^ set(params)
        if missing:
            raise CheckpointError(f"parameter names do not match architecture: {sorted(missing)}")
        net.set_params(params)
        return net

    @property
    def train_times(self) -> np.ndarray:
        return self.arrays["train.times"]

    @property
    def train_events(self) -> np.ndarray:
        return self.arrays["train.events"]


def load(path) -> LoadedCheckpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read(_META_NAME))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name[:-4]] = np.load(io.BytesIO(zf.read(name)))
    except (zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    return LoadedCheckpoint(meta, arrays)


def describe(path) -> str:
    """Human-readable checkpoint summary."""
    ck = load(path)
    meta = ck.meta
    lines = [
        f"checkpoint format v{meta['format_version']}",
        f"schema hash: {meta['schema_hash']}",
        f"columns ({len(meta['columns'])}):",
    ]
    for col in meta["columns"]:
        extra = f" categories={col['categories']}" if col["categories"] else ""
        lines.append(f"  - {col['name']} [{col['kind']}]{extra}")
    t = meta["transform"]
    lines.append(
        f"transform: mode={t['mode']} mu={t['mu']:.6g} sigma={t['sigma']:.6g} "
        f"mixture=N(+-{t['mixture_mean']}, {t['mixture_var']})"
    )
    s = meta["schedule"]
    betas = ck.arrays["schedule.betas"]
    lines.append(f"schedule: r={s['r']} s={s['s']} beta range [{betas.min():.3g}, {betas.max():.3g}]")
    arch = meta["architecture"]
    lines.append("architecture: " + ", ".join(f"{k}={v}" for k, v in sorted(arch.items())))
    n_params = sum(v.size for k, v in ck.arrays.items() if k.startswith("param."))
    lines.append(f"parameters: {n_params}")
    lines.append(
        f"training data: {ck.train_times.size} rows, event rate "
        f"{ck.train_events.mean():.4f}, max time {ck.train_times.max():.6g}"
    )
    if meta["training_summary"]:
        lines.append("training summary: " + json.dumps(meta["training_summary"], sort_keys=True))
    return "\n".join(lines)
