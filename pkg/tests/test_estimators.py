import itertools

import numpy as np
import pytest

from survdpm.estimators import (
    StepSurvivalCurve,
    TimeGrid,
    censoring_km,
    kaplan_meier,
    project_to_grid,
    restricted_mean,
    survival_from_samples,
)
from survdpm.sampler import GeneratedOutcomes

from oracles import km_eval, km_oracle, restricted_mean_oracle


def curve_as_jumps(curve):
    return list(zip(curve.grid.tolist(), curve.values[1:].tolist()))


class TestKaplanMeier:
    def test_five_point_example(self):
        # hand product-limit: jumps at 1, 3, 4
        curve = kaplan_meier([1, 2, 3, 4, 5], [1, 0, 1, 1, 0])
        assert curve.grid.tolist() == [1.0, 3.0, 4.0]
        np.testing.assert_allclose(
            curve.values, [1.0, 0.8, 0.5333333333333333, 0.26666666666666666], atol=1e-15
        )

    def test_no_censoring_is_ecdf_complement(self):
        times = [3.0, 1.0, 2.0, 5.0]
        curve = kaplan_meier(times, [1, 1, 1, 1])
        np.testing.assert_allclose(curve.values, [1.0, 0.75, 0.5, 0.25, 0.0], atol=1e-15)

    def test_all_censored_stays_at_one(self):
        curve = kaplan_meier([1.0, 2.0, 3.0], [0, 0, 0])
        assert curve.grid.size == 0
        assert curve.values.tolist() == [1.0]
        assert curve.evaluate(100.0) == 1.0

    def test_empty_input_errors(self):
        with pytest.raises(ValueError):
            kaplan_meier([], [])

    def test_matches_oracle_on_enumerated_patterns(self):
        # every event pattern on 8 subjects, random times with ties
        rng = np.random.default_rng(5)
        times = rng.integers(1, 6, size=8).astype(float)
        for pattern in itertools.product((0, 1), repeat=8):
            if sum(pattern) == 0:
                continue
            curve = kaplan_meier(times, list(pattern))
            jumps = km_oracle(times.tolist(), list(pattern))
            for t in np.linspace(0, 7, 29):
                assert curve.evaluate(t) == pytest.approx(km_eval(jumps, t), abs=1e-12)

    def test_monotone_and_starts_at_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(1, 12)
            times = rng.uniform(0.1, 10, n)
            events = rng.integers(0, 2, n)
            curve = kaplan_meier(times, events)
            assert curve.values[0] == 1.0
            assert np.all(np.diff(curve.values) <= 1e-15)


class TestCensoringKM:
    def test_no_censoring_is_one(self):
        curve = censoring_km([1, 2, 3], [1, 1, 1])
        assert curve.values.tolist() == [1.0]

    def test_two_censored(self):
        curve = censoring_km([1.0, 2.0], [0, 0])
        assert curve.grid.tolist() == [1.0, 2.0]
        np.testing.assert_allclose(curve.values, [1.0, 0.5, 0.0], atol=1e-15)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(1)
        times = rng.uniform(0.5, 5.0, 10)
        events = rng.integers(0, 2, 10)
        a = censoring_km(times, events)
        b = kaplan_meier(times, 1 - events)
        np.testing.assert_array_equal(a.grid, b.grid)
        np.testing.assert_array_equal(a.values, b.values)


class TestProjection:
    def test_own_grid_preserves_values(self):
        curve = kaplan_meier([1, 2, 3, 4, 5], [1, 0, 1, 1, 0])
        projected = project_to_grid(curve, TimeGrid(curve.grid))
        np.testing.assert_array_equal(projected.values, curve.values)

    def test_before_first_jump_is_one(self):
        curve = kaplan_meier([5.0], [1])
        projected = project_to_grid(curve, TimeGrid(np.array([1.0, 2.0])))
        assert projected.values[0] == 1.0
        assert projected.values[1] == 1.0

    def test_five_point_projection(self):
        curve = kaplan_meier([1, 2, 3, 4, 5], [1, 0, 1, 1, 0])
        projected = project_to_grid(curve, TimeGrid(np.array([2.0, 3.5])))
        np.testing.assert_allclose(
            projected.values, [1.0, 0.8, 0.5333333333333333], atol=1e-12
        )

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        curve = kaplan_meier(rng.uniform(0.5, 8, 20), rng.integers(0, 2, 20))
        grid = TimeGrid(np.sort(rng.uniform(0.1, 9, 7)))
        once = project_to_grid(curve, grid)
        twice = project_to_grid(once, grid)
        np.testing.assert_array_equal(once.values, twice.values)


class TestSurvivalFromSamples:
    def test_single_event_pair(self):
        out = GeneratedOutcomes(np.array([2.0]), np.array([1]), np.zeros(1))
        curve = survival_from_samples(out, TimeGrid(np.array([1.0, 3.0])))
        np.testing.assert_array_equal(curve.values, [1.0, 1.0, 0.0])

    def test_all_censored(self):
        out = GeneratedOutcomes(np.array([2.0, 4.0]), np.array([0, 0]), np.zeros(1))
        curve = survival_from_samples(out, TimeGrid(np.array([1.0, 3.0])))
        np.testing.assert_array_equal(curve.values, [1.0, 1.0, 1.0])

    def test_composition_identity_with_real_pairs(self):
        rng = np.random.default_rng(3)
        times = rng.uniform(0.5, 5.0, 40)
        events = rng.integers(0, 2, 40)
        out = GeneratedOutcomes(times, events, np.zeros(1))
        km = kaplan_meier(times, events)
        grid = TimeGrid(km.grid) if km.grid.size else TimeGrid(np.array([1.0]))
        direct = project_to_grid(km, grid)
        via_samples = survival_from_samples(out, grid)
        np.testing.assert_array_equal(direct.values, via_samples.values)

    def test_glivenko_cantelli_convergence(self):
        # known discrete law: T in {1, 2, 3}, delta depends on the atom
        rng = np.random.default_rng(7)
        n = 100_000
        atoms = np.array([1.0, 2.0, 3.0])
        probs = np.array([0.3, 0.45, 0.25])
        deltas_for_atom = np.array([1, 0, 1])
        pick = rng.choice(3, size=n, p=probs)
        out = GeneratedOutcomes(atoms[pick], deltas_for_atom[pick], np.zeros(1))
        grid = TimeGrid(np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]))
        curve = survival_from_samples(out, grid)
        pop = population_km(atoms, probs, deltas_for_atom)
        diffs = [abs(curve.evaluate(t) - km_eval(pop, t)) for t in np.linspace(0, 3.5, 701)]
        assert max(diffs) <= 0.02


def population_km(atoms, probs, deltas_for_atom):
    """Population product-limit of a discrete (T, delta) law."""
    jumps = []
    s = 1.0
    survivors = 1.0
    for a, p, d in sorted(zip(atoms, probs, deltas_for_atom)):
        if d == 1:
            factor = 1.0 - p / survivors
            s *= factor
            jumps.append((a, s))
        survivors -= p
    return jumps


class TestRestrictedMean:
    def test_unit_box(self):
        curve = StepSurvivalCurve(np.array([1.0]), np.array([1.0, 0.0]))
        assert restricted_mean(curve) == 1.0

    def test_constant_one(self):
        curve = StepSurvivalCurve(np.array([2.0, 7.0]), np.array([1.0, 1.0, 1.0]))
        assert restricted_mean(curve) == pytest.approx(7.0)

    def test_five_point_km(self):
        curve = kaplan_meier([1, 2, 3, 4, 5], [1, 0, 1, 1, 0])
        assert restricted_mean(curve) == pytest.approx(3.1333333333333333, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            curve = kaplan_meier(rng.uniform(0.5, 9, 15), rng.integers(0, 2, 15))
            expected = restricted_mean_oracle(curve.grid.tolist(), curve.values.tolist())
            assert restricted_mean(curve) == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_curve(self):
        grid = np.array([1.0, 2.0, 4.0])
        low = StepSurvivalCurve(grid, np.array([1.0, 0.5, 0.2, 0.0]))
        high = StepSurvivalCurve(grid, np.array([1.0, 0.9, 0.6, 0.0]))
        assert restricted_mean(high) > restricted_mean(low)


class TestCurveValidation:
    def test_rejects_increasing_values(self):
        with pytest.raises(ValueError):
            StepSurvivalCurve(np.array([1.0]), np.array([0.5, 0.8]))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            StepSurvivalCurve(np.array([1.0]), np.array([1.5, 0.5]))

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            StepSurvivalCurve(np.array([2.0, 1.0]), np.array([1.0, 0.8, 0.5]))

    def test_timegrid_from_training_needs_events(self):
        with pytest.raises(ValueError):
            TimeGrid.from_training([1.0, 2.0], [0, 0])
