"""Tabular survival data: CSV loading, preprocessing, stratified splits.

Numeric features are mean-imputed and standardized (population std),
categoricals are one-hot encoded with a reserved ``__missing__`` category
appended when missing values were seen. Preprocessing statistics can be fit
on a row subset (the training part) and reused, so no test information leaks
into the encoding.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MISSING_CATEGORY = "__missing__"
MISSING_TOKENS = {"", "na", "nan", "null"}

KIND_NUMERIC = "numeric"
KIND_CATEGORICAL = "categorical"
KIND_TIME = "time"
KIND_EVENT = "event"


class DataValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (KIND_NUMERIC, KIND_CATEGORICAL, KIND_TIME, KIND_EVENT):
            raise ValueError(f"unknown column kind {self.kind!r}")


@dataclass(frozen=True)
class SchemaDeclaration:
    """Column roles as declared in the sidecar config (pre-fit)."""

    time_column: str
    event_column: str
    categorical_columns: tuple[str, ...] = ()

    def roles(self, header: list[str]) -> list[ColumnSpec]:
        missing = {self.time_column, self.event_column, *self.categorical_columns} - set(header)
        if missing:
            raise DataValidationError(f"declared columns absent from header: {sorted(missing)}")
        specs = []
        for name in header:
            if name == self.time_column:
                specs.append(ColumnSpec(name, KIND_TIME))
            elif name == self.event_column:
                specs.append(ColumnSpec(name, KIND_EVENT))
            elif name in self.categorical_columns:
                specs.append(ColumnSpec(name, KIND_CATEGORICAL))
            else:
                specs.append(ColumnSpec(name, KIND_NUMERIC))
        return specs


@dataclass(frozen=True)
class SurvivalDataset:
    features: np.ndarray
    times: np.ndarray
    events: np.ndarray
    specs: tuple[ColumnSpec, ...]
    numeric_stats: dict[str, tuple[float, float]]
    feature_names: tuple[str, ...]
    n_dropped: int = 0

    def __post_init__(self):
        for name in ("features", "times", "events"):
            arr = np.asarray(getattr(self, name), dtype=float if name != "events" else int)
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)
        if np.any(self.times <= 0) or np.any(~np.isfinite(self.times)):
            raise DataValidationError("all times must be strictly positive and finite")
        if not np.isin(self.events, (0, 1)).all():
            raise DataValidationError("events must contain only 0 and 1")
        n_time = sum(1 for s in self.specs if s.kind == KIND_TIME)
        n_event = sum(1 for s in self.specs if s.kind == KIND_EVENT)
        if n_time != 1 or n_event != 1:
            raise DataValidationError("need exactly one time column and one event column")

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def feature_specs(self) -> tuple[ColumnSpec, ...]:
        return tuple(s for s in self.specs if s.kind in (KIND_NUMERIC, KIND_CATEGORICAL))


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def parts(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


# -- parsing ---------------------------------------------------------------


@dataclass
class RawTable:
    """Column-major parsed CSV with missing-value masks, all-missing rows
    already removed and the outcome columns validated."""

    specs: list[ColumnSpec]
    numeric: dict[str, np.ndarray]        # float values, nan where missing
    categorical: dict[str, list[str | None]]
    times: np.ndarray
    events: np.ndarray
    n_dropped: int

    @property
    def n(self) -> int:
        return int(self.times.size)


def _is_missing(token: str) -> bool:
    return token.strip().lower() in MISSING_TOKENS


def parse_csv(path, schema: SchemaDeclaration, time_shift_epsilon: float = 0.0) -> RawTable:
    """Read and validate a survival CSV.

    Rows whose feature cells are all missing are dropped (and counted).
    Malformed numerics, nonpositive/missing times, and non-binary event flags
    raise with the offending line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        specs = schema.roles(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append((lineno, [c.strip() for c in row]))

    feature_cols = [i for i, s in enumerate(specs) if s.kind in (KIND_NUMERIC, KIND_CATEGORICAL)]
    kept = []
    n_dropped = 0
    for lineno, row in rows:
        if feature_cols and all(_is_missing(row[i]) for i in feature_cols):
            n_dropped += 1
            continue
        kept.append((lineno, row))
    if n_dropped:
        log.warning("%s: dropped %d rows with all features missing", path, n_dropped)

    numeric: dict[str, list[float]] = {s.name: [] for s in specs if s.kind == KIND_NUMERIC}
    categorical: dict[str, list[str | None]] = {
        s.name: [] for s in specs if s.kind == KIND_CATEGORICAL
    }
    times, events = [], []
    for lineno, row in kept:
        for i, spec in enumerate(specs):
            cell = row[i]
            if spec.kind == KIND_NUMERIC:
                if _is_missing(cell):
                    numeric[spec.name].append(np.nan)
                else:
                    try:
                        numeric[spec.name].append(float(cell))
                    except ValueError:
                        raise DataValidationError(
                            f"{path}:{lineno}: bad numeric value {cell!r} in {spec.name!r}"
                        ) from None
            elif spec.kind == KIND_CATEGORICAL:
                categorical[spec.name].append(None if _is_missing(cell) else cell)
            elif spec.kind == KIND_TIME:
                if _is_missing(cell):
                    raise DataValidationError(f"{path}:{lineno}: missing time value")
                try:
                    t = float(cell) + time_shift_epsilon
                except ValueError:
                    raise DataValidationError(
                        f"{path}:{lineno}: bad time value {cell!r}"
                    ) from None
                if not np.isfinite(t) or t <= 0:
                    raise DataValidationError(
                        f"{path}:{lineno}: time must be positive and finite, got {cell!r}"
                    )
                times.append(t)
            else:
                try:
                    e = float(cell)
                except ValueError:
                    raise DataValidationError(
                        f"{path}:{lineno}: bad event value {cell!r}"
                    ) from None
                if e not in (0.0, 1.0):
                    raise DataValidationError(
                        f"{path}:{lineno}: event indicator must be 0 or 1, got {cell!r}"
                    )
                events.append(int(e))

    return RawTable(
        specs=specs,
        numeric={k: np.asarray(v, dtype=float) for k, v in numeric.items()},
        categorical=categorical,
        times=np.asarray(times, dtype=float),
        events=np.asarray(events, dtype=int),
        n_dropped=n_dropped,
    )


# -- preprocessing ----------------------------------------------------------


@dataclass(frozen=True)
class Preprocessor:
    """Frozen encoding statistics: per-numeric (mean, std) and per-categorical
    ordered category lists."""

    specs: tuple[ColumnSpec, ...]
    numeric_stats: dict[str, tuple[float, float]]

    @classmethod
    def fit(cls, raw: RawTable, rows: np.ndarray | None = None) -> "Preprocessor":
        """Compute statistics from a row subset (defaults to all rows)."""
        idx = np.arange(raw.n) if rows is None else np.asarray(rows, dtype=int)
        stats = {}
        specs = []
        for spec in raw.specs:
            if spec.kind == KIND_NUMERIC:
                vals = raw.numeric[spec.name][idx]
                present = vals[~np.isnan(vals)]
                if present.size == 0:
                    mean, std = 0.0, 0.0
                else:
                    mean = float(present.mean())
                    std = float(present.std())  # population std; 0 flags constants
                stats[spec.name] = (mean, std)
                specs.append(spec)
            elif spec.kind == KIND_CATEGORICAL:
                col = [raw.categorical[spec.name][i] for i in idx]
                cats = sorted({c for c in col if c is not None})
                if any(c is None for c in col):
                    cats.append(MISSING_CATEGORY)
                specs.append(ColumnSpec(spec.name, spec.kind, tuple(cats)))
            else:
                specs.append(spec)
        return cls(specs=tuple(specs), numeric_stats=stats)

    def feature_names(self) -> tuple[str, ...]:
        names = []
        for spec in self.specs:
            if spec.kind == KIND_NUMERIC:
                names.append(spec.name)
            elif spec.kind == KIND_CATEGORICAL:
                names.extend(f"{spec.name}={c}" for c in spec.categories)
        return tuple(names)

    def transform_features(self, raw: RawTable) -> np.ndarray:
        """Encode all raw rows with the frozen statistics."""
        cols = []
        for spec in self.specs:
            if spec.kind == KIND_NUMERIC:
                mean, std = self.numeric_stats[spec.name]
                vals = raw.numeric[spec.name].copy()
                vals[np.isnan(vals)] = mean
                cols.append((vals - mean) / std if std > 0 else np.zeros_like(vals))
            elif spec.kind == KIND_CATEGORICAL:
                cat_to_col = {c: i for i, c in enumerate(spec.categories)}
                block = np.zeros((raw.n, len(spec.categories)))
                for r, value in enumerate(raw.categorical[spec.name]):
                    key = MISSING_CATEGORY if value is None else value
                    if key not in cat_to_col:
                        if MISSING_CATEGORY in cat_to_col:
                            log.warning(
                                "unseen category %r in %r mapped to %s",
                                value, spec.name, MISSING_CATEGORY,
                            )
                            key = MISSING_CATEGORY
                        else:
                            log.warning(
                                "unseen category %r in %r encoded as all-zero block",
                                value, spec.name,
                            )
                            continue
                    block[r, cat_to_col[key]] = 1.0
                cols.append(block)
        if not cols:
            return np.zeros((raw.n, 0))
        return np.column_stack(cols)

    def build_dataset(self, raw: RawTable) -> SurvivalDataset:
        return SurvivalDataset(
            features=self.transform_features(raw),
            times=raw.times,
            events=raw.events,
            specs=self.specs,
            numeric_stats=dict(self.numeric_stats),
            feature_names=self.feature_names(),
            n_dropped=raw.n_dropped,
        )


def load_csv(path, schema: SchemaDeclaration, time_shift_epsilon: float = 0.0) -> SurvivalDataset:
    """One-shot load: parse, fit statistics on all rows, encode."""
    raw = parse_csv(path, schema, time_shift_epsilon)
    return Preprocessor.fit(raw).build_dataset(raw)


def load_features_csv(path, pre: Preprocessor) -> np.ndarray:
    """Encode a features-only CSV with frozen statistics.

    The header must contain every feature column the preprocessor was fit on
    (outcome columns are optional and ignored); a mismatch is a schema error.
    """
    feature_specs = [s for s in pre.specs if s.kind in (KIND_NUMERIC, KIND_CATEGORICAL)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        missing = [s.name for s in feature_specs if s.name not in header]
        if missing:
            raise DataValidationError(
                f"{path}: feature columns missing from header (schema mismatch): {missing}"
            )
        col_of = {name: header.index(name) for name in (s.name for s in feature_specs)}
        numeric = {s.name: [] for s in feature_specs if s.kind == KIND_NUMERIC}
        categorical = {s.name: [] for s in feature_specs if s.kind == KIND_CATEGORICAL}
        n = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            n += 1
            for spec in feature_specs:
                cell = row[col_of[spec.name]].strip()
                if spec.kind == KIND_NUMERIC:
                    if _is_missing(cell):
                        numeric[spec.name].append(np.nan)
                    else:
                        try:
                            numeric[spec.name].append(float(cell))
                        except ValueError:
                            raise DataValidationError(
                                f"{path}:{lineno}: bad numeric value {cell!r} in {spec.name!r}"
                            ) from None
                else:
                    categorical[spec.name].append(None if _is_missing(cell) else cell)

    raw = RawTable(
        specs=list(pre.specs),
        numeric={k: np.asarray(v, dtype=float) for k, v in numeric.items()},
        categorical=categorical,
        times=np.ones(n),
        events=np.zeros(n, dtype=int),
        n_dropped=0,
    )
    return pre.transform_features(raw)


def load_and_split(path, schema: SchemaDeclaration, fractions, seed: int,
                   time_shift_epsilon: float = 0.0):
    """Leakage-free load: split first, fit statistics on the training part,
    then encode every row with those statistics.

    Returns (dataset, split, preprocessor).
    """
    raw = parse_csv(path, schema, time_shift_epsilon)
    split = stratified_split_events(raw.events, fractions, seed)
    pre = Preprocessor.fit(raw, rows=split.train)
    return pre.build_dataset(raw), split, pre


# -- splitting ---------------------------------------------------------------


def _cumulative_counts(total: int, fractions) -> list[int]:
    """Partition sizes by rounding cumulative quotas; sums to total exactly."""
    bounds = [int(round(total * sum(fractions[: k + 1]))) for k in range(len(fractions))]
    bounds[-1] = total
    return [b - a for a, b in zip([0] + bounds[:-1], bounds)]


def stratified_split_events(events, fractions, seed: int) -> SplitIndices:
    """Shuffle and partition each censoring stratum by the given fractions.

    Per-stratum counts are rounded so each stratum is used exactly, then
    single members are shifted between parts until overall part sizes match
    the whole-dataset quotas.
    """
    events = np.asarray(events, dtype=int)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise DataValidationError("fractions must be (train, validation, test)")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataValidationError("fractions must be nonnegative and sum to 1")

    strata = [np.flatnonzero(events == v) for v in (0, 1)]
    present = [s for s in range(2) if strata[s].size > 0]
    counts = {s: _cumulative_counts(strata[s].size, fractions) for s in present}

    # repair part totals against the whole-dataset quotas
    targets = _cumulative_counts(int(events.size), fractions)
    for _ in range(8):
        sums = [sum(counts[s][k] for s in present) for k in range(3)]
        if sums == targets:
            break
        over = next(k for k in range(3) if sums[k] > targets[k])
        under = next(k for k in range(3) if sums[k] < targets[k])
        donor = max(
            present,
            key=lambda s: (counts[s][over] - strata[s].size * fractions[over])
            - (counts[s][under] - strata[s].size * fractions[under]),
        )
        if counts[donor][over] == 0:
            break
        counts[donor][over] -= 1
        counts[donor][under] += 1

    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for stratum in (0, 1):
        members = strata[stratum]
        if members.size == 0:
            continue
        shuffled = rng.permutation(members)
        prev = 0
        for k in range(3):
            chunk = shuffled[prev:prev + counts[stratum][k]]
            if fractions[k] > 0 and chunk.size == 0:
                raise DataValidationError(
                    f"stratum delta={stratum} too small to populate part {k} "
                    f"({members.size} members, fractions {fractions})"
                )
            parts[k].append(chunk)
            prev += counts[stratum][k]
    assemble = [
        np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts
    ]
    return SplitIndices(train=assemble[0], validation=assemble[1], test=assemble[2])


def stratified_split(ds: SurvivalDataset, fractions, seed: int) -> SplitIndices:
    return stratified_split_events(ds.events, fractions, seed)


def event_rate(ds) -> float:
    """Fraction of uncensored observations."""
    events = np.asarray(ds.events if hasattr(ds, "events") else ds)
    if events.size == 0:
        raise DataValidationError("event rate of an empty dataset is undefined")
    return float(events.mean())


def subset(ds: SurvivalDataset, rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, times, events) view of a row subset."""
    rows = np.asarray(rows, dtype=int)
    return ds.features[rows], ds.times[rows], ds.events[rows]
