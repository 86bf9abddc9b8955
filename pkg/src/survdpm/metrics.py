"""Censored-data evaluation metrics.

Concordance index on expected event times, cumulative/dynamic time-dependent
AUC and its survival-weighted integral, IPCW Brier score and its time average,
and the Kolmogorov-Smirnov distance between survival curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from survdpm.estimators import StepSurvivalCurve

G_FLOOR = 1e-4  # floor for the censoring-survival weights


@dataclass
class EvaluationInput:
    """Per-subject curves on one shared grid plus the observed test outcomes."""

    curves: Sequence[StepSurvivalCurve]
    risk_scores: np.ndarray
    test_times: np.ndarray
    test_events: np.ndarray
    censoring_curve: StepSurvivalCurve

    def __post_init__(self):
        self.risk_scores = np.asarray(self.risk_scores, dtype=float)
        self.test_times = np.asarray(self.test_times, dtype=float)
        self.test_events = np.asarray(self.test_events, dtype=int)
        n = len(self.curves)
        if not (n == self.risk_scores.size == self.test_times.size == self.test_events.size):
            raise ValueError("curves, risk_scores, test_times, test_events must align")
        if n == 0:
            raise ValueError("empty evaluation input")
        ref = self.curves[0].grid
        for c in self.curves[1:]:
            if c.grid.size != ref.size or not np.array_equal(c.grid, ref):
                raise ValueError("all subject curves must share one grid")

    def curve_matrix_at(self, t: float) -> np.ndarray:
        return np.array([c.evaluate(t) for c in self.curves])


def c_index(ev: EvaluationInput) -> float:
    """Concordance of expected-event-time ranking with observed times.

    Pairs (i, j) with t_i < t_j and an observed event for i are comparable;
    a pair is concordant when score_i < score_j. Score ties count 1/2.
    """
    t = ev.test_times
    d = ev.test_events
    s = ev.risk_scores
    comparable = (t[:, None] < t[None, :]) & (d[:, None] == 1)
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise ValueError("no comparable pairs for the concordance index")
    conc = (s[:, None] < s[None, :]).astype(float)
    conc += 0.5 * (s[:, None] == s[None, :])
    return float(conc[comparable].sum() / n_comp)


def td_auc(ev: EvaluationInput, t: float) -> float | None:
    """Cumulative/dynamic AUC at time t, or None when undefined.

    Cases are subjects with an observed event by t, controls those still under
    observation past t; the statistic is the fraction of case/control pairs
    where the case has the lower predicted survival at t (ties count 1/2).
    """
    cases = (ev.test_times <= t) & (ev.test_events == 1)
    controls = ev.test_times > t
    if not cases.any() or not controls.any():
        return None
    s_t = ev.curve_matrix_at(t)
    sc = s_t[cases][:, None]
    sk = s_t[controls][None, :]
    wins = (sc < sk).sum() + 0.5 * (sc == sk).sum()
    return float(wins / (cases.sum() * controls.sum()))


def integrated_auc(ev: EvaluationInput, km_test: StepSurvivalCurve) -> float:
    """Time-dependent AUC averaged against the test-set KM jump measure.

    Each evaluable test event time contributes td_auc weighted by the KM
    drop there; weights of skipped (undefined) times are renormalized away.
    """
    jump_times = km_test.grid
    weights = km_test.jumps()
    total_w = 0.0
    total = 0.0
    for t, w in zip(jump_times, weights):
        if w <= 0:
            continue
        auc_t = td_auc(ev, t)
        if auc_t is None:
            continue
        total += w * auc_t
        total_w += w
    if total_w <= 0:
        raise ValueError("integrated AUC undefined: no evaluable event times")
    return float(total / total_w)


def brier(ev: EvaluationInput, t: float) -> float:
    """IPCW Brier score at time t.

    Subjects with an observed event by t contribute S(t|x)^2 weighted by
    1/G(t_i-); subjects beyond t contribute (1 - S(t|x))^2 weighted by
    1/G(t). Censored-by-t subjects contribute nothing.
    """
    s_t = ev.curve_matrix_at(t)
    g = ev.censoring_curve
    event_by_t = (ev.test_times <= t) & (ev.test_events == 1)
    beyond_t = ev.test_times > t

    g_at_events = np.maximum(g.evaluate_left(ev.test_times), G_FLOOR)
    g_at_t = max(float(g.evaluate(t)), G_FLOOR)

    terms = np.zeros_like(s_t)
    terms[event_by_t] = s_t[event_by_t] ** 2 / g_at_events[event_by_t]
    terms[beyond_t] = (1.0 - s_t[beyond_t]) ** 2 / g_at_t
    return float(terms.mean())


def ibs(ev: EvaluationInput, t_max: float | None = None) -> float:
    """Time-averaged Brier score over [0, t_max], integrated exactly.

    BS(t) is piecewise constant between the union of curve grid points,
    observed test times, and censoring-curve jumps, so the integral is a
    finite sum. ``t_max`` defaults to the last point of the shared grid.
    """
    grid = ev.curves[0].grid
    if t_max is None:
        if grid.size == 0:
            raise ValueError("cannot infer t_max from an empty grid")
        t_max = float(grid[-1])
    if t_max <= 0:
        raise ValueError("t_max must be positive")

    breaks = np.concatenate(([0.0], grid, ev.test_times, ev.censoring_curve.grid))
    breaks = np.unique(breaks[(breaks >= 0.0) & (breaks < t_max)])
    widths = np.diff(np.append(breaks, t_max))
    total = sum(brier(ev, b) * w for b, w in zip(breaks, widths))
    return float(total / t_max)


def ks_distance(
    s1: StepSurvivalCurve | Callable[[np.ndarray], np.ndarray],
    s2: StepSurvivalCurve | Callable[[np.ndarray], np.ndarray],
    grid: np.ndarray,
) -> float:
    """Max absolute difference between two curves over an evaluation grid."""
    grid = np.asarray(grid, dtype=float)

    def values(s):
        if isinstance(s, StepSurvivalCurve):
            return s.evaluate(grid)
        return np.asarray(s(grid), dtype=float)

    return float(np.max(np.abs(values(s1) - values(s2))))


def uniform_grid(t_end: float, n_points: int = 1000) -> np.ndarray:
    """Uniform evaluation grid on [0, t_end] used for curve comparisons."""
    return np.linspace(0.0, t_end, n_points)
