"""Declarative run configuration.

One YAML file drives every command; the CLI only chooses the subcommand,
config path, seed, and output directory. Unknown keys are rejected with
their full path, and a canonical normalized form of the resolved config is
written next to each run's outputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from survdpm.dataset import SchemaDeclaration
from survdpm.denoiser import NetConfig
from survdpm.training import TrainConfig


class ConfigError(ValueError):
    pass


# Documented tuning ranges (kept as config-schema metadata; no search is run).
TUNING_RANGES = {
    "train.batch_size": {32, 64, 128},
    "train.learning_rate": (1e-4, 5e-3),
    "train.weight_decay": {0.0, 1e-6, 1e-5, 1e-4},
    "model.dropout_rate": (0.0, 0.25),
    "model.hidden_layers": {2, 3, 4, 5},
    "model.hidden_dim": {64, 128, 256, 512},
    "model.fourier_m": {8, 16, 32, 64},
    "model.fourier_init_scale": (0.01, 1.0),
    "model.cat_embed_dim": {4, 8},
    "model.step_embed_dim": {8, 16},
    "schedule.r": {10, 20, 30},
    "schedule.s": (1e-4, 0.15),
}


def _require(mapping: dict, path: str, allowed: dict):
    """Type-check known keys, reject unknown ones, apply defaults."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    out = {}
    for key, (types, default) in allowed.items():
        if key in mapping and mapping[key] is not None:
            value = mapping[key]
            if types is float and isinstance(value, int):
                value = float(value)
            if not isinstance(value, types):
                raise ConfigError(
                    f"{path}.{key}: expected {getattr(types, '__name__', types)}, "
                    f"got {type(value).__name__}"
                )
            out[key] = value
        elif default is ...:
            raise ConfigError(f"{path}.{key}: required key missing")
        else:
            out[key] = default
    return out


@dataclass(frozen=True)
class DatasetConfig:
    csv: str
    time_column: str
    event_column: str
    categorical_columns: tuple[str, ...] = ()
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 1
    time_shift_epsilon: float = 0.0

    def schema(self) -> SchemaDeclaration:
        return SchemaDeclaration(
            time_column=self.time_column,
            event_column=self.event_column,
            categorical_columns=tuple(self.categorical_columns),
        )


@dataclass(frozen=True)
class ScheduleConfig:
    r: int = 20
    s: float = 0.008


@dataclass(frozen=True)
class SampleConfig:
    checkpoint: str
    features_csv: str
    k: int = 2048
    r_new: int | None = None


@dataclass(frozen=True)
class EvaluateConfig:
    checkpoint: str
    test_csv: str
    k: int = 2048
    r_new: int | None = None


@dataclass(frozen=True)
class SynthConfig:
    n: int = 500
    d: int = 6
    event_rate: float = 0.5
    weibull_lambda: float = 1e-10
    weibull_nu: float = 4.0


@dataclass(frozen=True)
class SynthStudyConfig:
    n: int = 500
    d: int = 6
    event_rates: tuple[float, ...] = (0.25, 0.5, 0.75)
    k_values: tuple[int, ...] = (100, 500, 2000)
    grid_max: float = 500.0
    grid_points: int = 1000
    weibull_lambda: float = 1e-10
    weibull_nu: float = 4.0
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    curve_subjects: int = 8


@dataclass(frozen=True)
class AblationConfig:
    k: int = 2048


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    transform_mode: str = "transformed"
    dataset: DatasetConfig | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig | None = None
    evaluate: EvaluateConfig | None = None
    synth: SynthConfig | None = None
    synth_study: SynthStudyConfig = field(default_factory=SynthStudyConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def require(self, section: str):
        value = getattr(self, section)
        if value is None:
            raise ConfigError(f"config section {section!r} is required for this command")
        return value


_TOP_KEYS = {
    "seed", "transform_mode", "dataset", "schedule", "model", "train",
    "sample", "evaluate", "synth", "synth_study", "ablation",
}


def parse(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"config root: unknown keys {sorted(unknown)}")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: expected int")
    transform_mode = raw.get("transform_mode", "transformed")
    if transform_mode not in ("transformed", "raw_ablation"):
        raise ConfigError("transform_mode: must be 'transformed' or 'raw_ablation'")

    dataset = None
    if "dataset" in raw:
        d = _require(raw["dataset"], "dataset", {
            "csv": (str, ...),
            "time_column": (str, ...),
            "event_column": (str, ...),
            "categorical_columns": (list, []),
            "fractions": (list, [0.7, 0.15, 0.15]),
            "split_seed": (int, 1),
            "time_shift_epsilon": (float, 0.0),
        })
        if len(d["fractions"]) != 3:
            raise ConfigError("dataset.fractions: expected three values")
        dataset = DatasetConfig(
            csv=d["csv"],
            time_column=d["time_column"],
            event_column=d["event_column"],
            categorical_columns=tuple(d["categorical_columns"]),
            fractions=tuple(float(f) for f in d["fractions"]),
            split_seed=d["split_seed"],
            time_shift_epsilon=d["time_shift_epsilon"],
        )

    s = _require(raw.get("schedule", {}), "schedule", {
        "r": (int, 20),
        "s": (float, 0.008),
    })
    schedule = ScheduleConfig(**s)

    m = _require(raw.get("model", {}), "model", {
        "hidden_layers": (int, 3),
        "hidden_dim": (int, 128),
        "activation": (str, "silu"),
        "norm_mode": (str, "none"),
        "dropout_rate": (float, 0.2),
        "fourier_m": (int, 8),
        "fourier_init_scale": (float, 0.05),
        "cat_embed_dim": (int, 8),
        "step_embed_dim": (int, 16),
        "noise_embed": (bool, False),
    })
    try:
        model = NetConfig(**m)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    t = _require(raw.get("train", {}), "train", {
        "batch_size": (int, 64),
        "learning_rate": (float, 1e-3),
        "weight_decay": (float, 1e-4),
        "epochs": (int, 1000),
        "patience": (int, 100),
        "val_replicas": (int, 8),
        "float32": (bool, False),
    })
    try:
        train = TrainConfig(**t)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc

    sample = None
    if "sample" in raw:
        v = _require(raw["sample"], "sample", {
            "checkpoint": (str, ...),
            "features_csv": (str, ...),
            "k": (int, 2048),
            "r_new": (int, None),
        })
        if v["k"] < 1:
            raise ConfigError("sample.k: must be >= 1")
        sample = SampleConfig(**v)

    evaluate = None
    if "evaluate" in raw:
        v = _require(raw["evaluate"], "evaluate", {
            "checkpoint": (str, ...),
            "test_csv": (str, ...),
            "k": (int, 2048),
            "r_new": (int, None),
        })
        if v["k"] < 1:
            raise ConfigError("evaluate.k: must be >= 1")
        evaluate = EvaluateConfig(**v)

    synth = None
    if "synth" in raw:
        v = _require(raw["synth"], "synth", {
            "n": (int, 500),
            "d": (int, 6),
            "event_rate": (float, 0.5),
            "weibull_lambda": (float, 1e-10),
            "weibull_nu": (float, 4.0),
        })
        synth = SynthConfig(**v)

    v = _require(raw.get("synth_study", {}), "synth_study", {
        "n": (int, 500),
        "d": (int, 6),
        "event_rates": (list, [0.25, 0.5, 0.75]),
        "k_values": (list, [100, 500, 2000]),
        "grid_max": (float, 500.0),
        "grid_points": (int, 1000),
        "weibull_lambda": (float, 1e-10),
        "weibull_nu": (float, 4.0),
        "fractions": (list, [0.7, 0.15, 0.15]),
        "curve_subjects": (int, 8),
    })
    synth_study = SynthStudyConfig(
        n=v["n"], d=v["d"],
        event_rates=tuple(float(x) for x in v["event_rates"]),
        k_values=tuple(int(x) for x in v["k_values"]),
        grid_max=v["grid_max"], grid_points=v["grid_points"],
        weibull_lambda=v["weibull_lambda"], weibull_nu=v["weibull_nu"],
        fractions=tuple(float(f) for f in v["fractions"]),
        curve_subjects=v["curve_subjects"],
    )

    a = _require(raw.get("ablation", {}), "ablation", {"k": (int, 2048)})
    ablation = AblationConfig(**a)

    return RunConfig(
        seed=seed,
        transform_mode=transform_mode,
        dataset=dataset,
        schedule=schedule,
        model=model,
        train=train,
        sample=sample,
        evaluate=evaluate,
        synth=synth,
        synth_study=synth_study,
        ablation=ablation,
    )


def load(path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return parse(raw)


def canonical(cfg: RunConfig) -> str:
    """Normalized YAML form of a resolved config, for run provenance."""

    def clean(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {k: clean(v) for k, v in asdict(obj).items()}
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        return obj

    return yaml.safe_dump(clean(cfg), sort_keys=True, default_flow_style=False)
