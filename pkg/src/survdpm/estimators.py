"""Nonparametric survival estimation on step functions.

Kaplan-Meier product-limit curves (for events and for censoring), projection
onto a shared evaluation grid, and the restricted mean event time used as a
risk score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing positive time points; an implicit 0 precedes them."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1:
            raise ValueError("grid points must be one-dimensional")
        if pts.size and (np.any(~np.isfinite(pts)) or np.any(pts <= 0)):
            raise ValueError("grid points must be finite and positive")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)

    @classmethod
    def from_training(cls, times, events, include_censored: bool = False) -> "TimeGrid":
        """Grid of unique event times of a training set.

        ``include_censored`` additionally admits censored times (sensitivity
        checks only; the default follows the event-times-only convention).
        """
        times = np.asarray(times, dtype=float)
        events = np.asarray(events)
        mask = np.ones(len(times), dtype=bool) if include_censored else events == 1
        pts = np.unique(times[mask])
        if pts.size == 0:
            raise ValueError("cannot build a time grid: no event times in the data")
        return cls(points=pts)

    def __len__(self) -> int:
        return int(self.points.size)


@dataclass(frozen=True)
class StepSurvivalCurve:
    """Right-continuous step function on ``grid``.

    ``values`` has ``len(grid) + 1`` entries: values[0] on [0, grid[0]),
    values[k] on [grid[k-1], grid[k]), and values[-1] on [grid[-1], inf).
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if values.size != grid.size + 1:
            raise ValueError("need exactly one value per interval (len(grid)+1)")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(values < -1e-12) or np.any(values > 1 + 1e-12):
            raise ValueError("survival values must lie in [0, 1]")
        if np.any(np.diff(values) > 1e-12):
            raise ValueError("survival values must be non-increasing")
        grid.setflags(write=False)
        values.setflags(write=False)

    def evaluate(self, t) -> np.ndarray:
        """Right-continuous evaluation S(t); scalar in, scalar out."""
        idx = np.searchsorted(self.grid, t, side="right")
        return self.values[idx]

    def evaluate_left(self, t) -> np.ndarray:
        """Left limit S(t-)."""
        idx = np.searchsorted(self.grid, t, side="left")
        return self.values[idx]

    def jumps(self) -> np.ndarray:
        """Per-grid-point drops S(t-) - S(t), nonnegative."""
        return self.values[:-1] - self.values[1:]


def kaplan_meier(times, events) -> StepSurvivalCurve:
    """Product-limit estimate of the survival function.

    At each distinct time with d events among n at risk the curve is
    multiplied by (1 - d/n). Censored observations only shrink the risk set;
    ties at the same time count events before censorings.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    if times.size == 0:
        raise ValueError("kaplan_meier requires at least one observation")
    if times.shape != events.shape:
        raise ValueError("times and events must have the same length")

    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    e_sorted = events[order]

    uniq, start = np.unique(t_sorted, return_index=True)
    n = times.size
    d = np.add.reduceat(e_sorted, start)  # events at each distinct time
    at_risk = n - start  # observations with time >= uniq[k]

    jump_mask = d > 0
    grid = uniq[jump_mask]
    factors = 1.0 - d[jump_mask] / at_risk[jump_mask]
    values = np.concatenate(([1.0], np.cumprod(factors)))
    return StepSurvivalCurve(grid=grid, values=values)


def censoring_km(times, events) -> StepSurvivalCurve:
    """Kaplan-Meier estimate of the censoring survival function P(C > t)."""
    events = np.asarray(events, dtype=int)
    return kaplan_meier(times, 1 - events)


def project_to_grid(curve: StepSurvivalCurve, grid: TimeGrid) -> StepSurvivalCurve:
    """Re-express a curve as a step function on ``grid``.

    Each interval takes the curve's right-continuous value at the interval's
    left endpoint (0 for the first interval). Idempotent.
    """
    pts = grid.points
    left_endpoints = np.concatenate(([0.0], pts))
    values = curve.evaluate(left_endpoints)
    return StepSurvivalCurve(grid=pts.copy(), values=values)


def survival_from_samples(out, grid: TimeGrid) -> StepSurvivalCurve:
    """Survival curve of a generated outcome set: KM on the samples, projected.

    ``out`` is a GeneratedOutcomes (or anything with .times/.deltas arrays).
    """
    km = kaplan_meier(out.times, out.deltas)
    return project_to_grid(km, grid)


def restricted_mean(curve: StepSurvivalCurve) -> float:
    """Integral of the curve from 0 to its last grid point.

    This truncated mean event time is the risk score used for ranking; the
    terminal value past the last grid point is deliberately not integrated.
    """
    if curve.grid.size == 0:
        return 0.0
    widths = np.diff(np.concatenate(([0.0], curve.grid)))
    return float(np.dot(curve.values[:-1], widths))
