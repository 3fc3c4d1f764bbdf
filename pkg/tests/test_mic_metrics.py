import numpy as np
import pytest

from errors import InvalidInputError
from mic_metrics import (characteristic_matrix, equipartition, exhaustive_best_grid, grid_budget, mic,
                         mic_exhaustive, mic_tic, tic)


class TestCharacteristicMatrix:
    def test_constant_y_gives_zero_entries(self, rng):
        x = rng.random(100)
        matrix = characteristic_matrix(x, np.full(100, 3.0))
        assert all(v == 0.0 for v in matrix.entries.values())

    def test_identity_two_by_two_is_one(self):
        x = np.arange(100, dtype=float)
        matrix = characteristic_matrix(x, x)
        assert matrix.entries[(2, 2)] == pytest.approx(1.0, abs=1e-12)

    def test_entries_within_budget_and_unit_interval(self, rng):
        x = rng.random(300)
        y = x ** 2 + 0.1 * rng.standard_normal(300)
        matrix = characteristic_matrix(x, y)
        assert matrix.B == grid_budget(300)
        for (a, b), v in matrix.entries.items():
            assert a >= 2 and b >= 2 and a * b <= matrix.B
            assert 0.0 <= v <= 1.0

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            characteristic_matrix(np.arange(5.0), np.arange(5.0))
        with pytest.raises(InvalidInputError):
            characteristic_matrix(np.arange(10.0), np.arange(11.0))
        with pytest.raises(InvalidInputError):
            characteristic_matrix(np.append(np.arange(9.0), np.nan), np.arange(10.0))


class TestEquipartition:
    def test_balanced_bins(self):
        labels = equipartition(np.arange(12.0), 3)
        assert np.bincount(labels).tolist() == [4, 4, 4]

    def test_ties_share_a_bin(self):
        v = np.array([0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0])
        labels = equipartition(v, 2)
        assert len(set(labels[1:5])) == 1


class TestMic:
    def test_noiseless_line(self):
        x = np.linspace(0.0, 1.0, 200)
        assert mic(x, 3.0 * x + 1.0) >= 0.99

    def test_independent_shuffles(self):
        values = []
        for seed in range(20):
            r = np.random.default_rng(seed)
            x = r.random(500)
            values.append(mic(x, r.permutation(x)))
        assert np.mean(values) <= 0.25

    def test_sine(self, rng):
        x = rng.random(500)
        assert mic(x, np.sin(4 * np.pi * x)) >= 0.6

    def test_symmetry(self, rng):
        x = rng.standard_normal(200)
        y = np.abs(x) + 0.3 * rng.standard_normal(200)
        assert mic(x, y) == mic(y, x)
        assert tic(x, y) == tic(y, x)

    def test_monotone_invariance(self, rng):
        x = rng.standard_normal(300)
        y = np.sin(x) + 0.2 * rng.standard_normal(300)
        base = mic(x, y)
        assert mic(np.exp(x), y) == pytest.approx(base, abs=1e-12)
        assert mic(x, y ** 3) == pytest.approx(base, abs=1e-12)

    def test_ordering(self, rng):
        for _ in range(5):
            x = rng.random(150)
            y = x + rng.normal(0.0, rng.uniform(0.05, 1.0), 150)
            m, t = mic_tic(x, y)
            assert 0.0 <= t <= m <= 1.0


class TestTic:
    def test_constant(self, rng):
        assert tic(rng.random(50), np.zeros(50)) == 0.0

    def test_identity_saturates(self):
        x = np.arange(200, dtype=float)
        assert tic(x, x) >= 0.9


class TestExhaustive:
    def test_identity(self):
        x = np.arange(12, dtype=float)
        assert mic_exhaustive(x, x, 6) == pytest.approx(1.0)

    def test_heuristic_never_exceeds_exhaustive(self):
        for seed in range(15):
            r = np.random.default_rng(seed)
            n = int(r.integers(8, 21))
            B = int(r.integers(4, 7))
            x = r.random(n)
            y = np.where(r.random(n) < 0.5, x, r.random(n))
            assert mic(x, y, B=B) <= mic_exhaustive(x, y, B) + 1e-12

    def test_equality_on_monotone_data(self, rng):
        x = rng.random(20)
        y = np.exp(x)
        assert mic(x, y, B=6) == pytest.approx(mic_exhaustive(x, y, 6), abs=1e-12)

    def test_best_grid_reports_cuts(self):
        x = np.arange(10, dtype=float)
        score, grid = exhaustive_best_grid(x, x, 4)
        assert score == pytest.approx(1.0)
        assert grid.shape == (2, 2)

    def test_refuses_large_problems(self):
        x = np.arange(40, dtype=float)
        with pytest.raises(InvalidInputError):
            mic_exhaustive(x, x, 6)
        with pytest.raises(InvalidInputError):
            mic_exhaustive(x[:20], x[:20], 12)
