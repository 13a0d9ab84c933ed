"""Tests for exhaustive search, draw-restricted search, and synthetic data."""

import numpy as np
import pytest

from salso_kit.baselines import (
    ENUMERATION_CAP,
    SyntheticSpec,
    brute_force_minimizer,
    draws_method,
    enumerate_partitions,
    map_estimate,
    synthetic_draws,
)
from salso_kit.losses import LossSpec, expected_loss
from salso_kit.partitions import DrawsMatrix, canonicalize, num_clusters

# Bell numbers B(1)..B(10).
BELL = [1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]

# Stirling numbers of the second kind S(6, k) for k = 1..6.
STIRLING_6 = [1, 31, 90, 65, 15, 1]


@pytest.fixture
def tiny_draws():
    return DrawsMatrix.from_labels(np.array([[1, 1, 2], [1, 2, 2]]))


class TestEnumeratePartitions:
    def test_bell_counts(self):
        for n, bell in enumerate(BELL, start=1):
            assert sum(1 for _ in enumerate_partitions(n)) == bell

    def test_all_canonical_and_lexicographic(self):
        prev = None
        for labels in enumerate_partitions(6):
            assert np.array_equal(canonicalize(labels), labels)
            key = tuple(labels)
            if prev is not None:
                assert key > prev
            prev = key

    def test_endpoints(self):
        parts = list(enumerate_partitions(4))
        assert parts[0].tolist() == [1, 1, 1, 1]
        assert parts[-1].tolist() == [1, 2, 3, 4]

    def test_max_clusters_matches_stirling(self):
        for kmax in range(1, 7):
            got = sum(1 for _ in enumerate_partitions(6, max_clusters=kmax))
            assert got == sum(STIRLING_6[:kmax])

    def test_max_clusters_equals_post_filter(self):
        full = [p for p in enumerate_partitions(5) if num_clusters(p) <= 2]
        restricted = list(enumerate_partitions(5, max_clusters=2))
        assert len(full) == len(restricted)
        for x, y in zip(full, restricted):
            assert np.array_equal(x, y)

    def test_cap(self):
        with pytest.raises(ValueError):
            list(enumerate_partitions(ENUMERATION_CAP + 1))
        with pytest.raises(ValueError):
            list(enumerate_partitions(6, cap=5))
        assert sum(1 for _ in enumerate_partitions(6, cap=6)) == BELL[5]


class TestBruteForceMinimizer:
    def test_tiny_binder_tie_set(self, tiny_draws):
        minimizers, best = brute_force_minimizer(tiny_draws, LossSpec("binder"))
        assert abs(best - 2.0 / 9.0) < 1e-12
        got = [m.tolist() for m in minimizers]
        assert got == [[1, 1, 2], [1, 2, 2], [1, 2, 3]]

    def test_cluster_cap_changes_answer(self, tiny_draws):
        minimizers, best = brute_force_minimizer(tiny_draws, LossSpec("binder"), max_clusters=1)
        assert abs(best - 4.0 / 9.0) < 1e-12
        assert [m.tolist() for m in minimizers] == [[1, 1, 1]]

    @pytest.mark.parametrize("kind", ["binder", "vi", "omari", "nid"])
    def test_matches_direct_scan(self, kind):
        rng = np.random.default_rng(42)
        d = DrawsMatrix.from_labels(rng.integers(1, 4, size=(15, 6)))
        spec = LossSpec(kind)
        minimizers, best = brute_force_minimizer(d, spec)
        direct = min(expected_loss(d, p, spec) for p in enumerate_partitions(6))
        assert abs(best - direct) < 1e-12
        for m in minimizers:
            assert expected_loss(d, m, spec) <= best + 1e-9 * max(1.0, abs(best))


class TestDrawsMethod:
    def test_tiny_oracle(self, tiny_draws):
        labels, loss = draws_method(tiny_draws, LossSpec("binder"))
        assert labels.tolist() == [1, 1, 2]  # tie with row 1; lowest index wins
        assert abs(loss - 2.0 / 9.0) < 1e-12

    def test_equals_restricted_minimum(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            d = DrawsMatrix.from_labels(rng.integers(1, 4, size=(12, 7)))
            spec = LossSpec("vi")
            labels, loss = draws_method(d, spec)
            per_row = [expected_loss(d, row, spec) for row in d.labels]
            assert abs(loss - min(per_row)) < 1e-12
            assert any(np.array_equal(labels, row) for row in d.labels)

    def test_tie_breaks_to_first_draw(self):
        d = DrawsMatrix.from_labels(np.array([[1, 2, 2], [1, 1, 2]]))
        labels, _ = draws_method(d, LossSpec("binder"))
        assert labels.tolist() == [1, 2, 2]


class TestMapEstimate:
    def test_tiny_oracle(self):
        d = DrawsMatrix.from_labels(np.array([[1, 1, 2], [1, 1, 2], [1, 2, 2]]))
        labels, freq = map_estimate(d)
        assert labels.tolist() == [1, 1, 2]
        assert abs(freq - 2.0 / 3.0) < 1e-15

    def test_tie_breaks_to_first_draw(self):
        d = DrawsMatrix.from_labels(np.array([[1, 2, 2], [1, 1, 2], [1, 1, 2], [1, 2, 2]]))
        labels, freq = map_estimate(d)
        assert labels.tolist() == [1, 2, 2]
        assert freq == 0.5

    def test_one_zero_relation(self):
        rng = np.random.default_rng(11)
        d = DrawsMatrix.from_labels(rng.integers(1, 3, size=(20, 5)))
        labels, freq = map_estimate(d)
        assert abs(expected_loss(d, labels, LossSpec("one_zero")) - (1.0 - freq)) < 1e-15


class TestSyntheticDraws:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_items": 0},
            {"k_true": 0},
            {"k_true": 9},
            {"n_draws": 0},
            {"noise": -0.1},
            {"noise": 1.1},
        ],
    )
    def test_spec_validation(self, kwargs):
        base = {"n_items": 8, "k_true": 3, "n_draws": 10, "noise": 0.3}
        base.update(kwargs)
        with pytest.raises(ValueError):
            SyntheticSpec(**base)

    def test_shape_and_determinism(self):
        spec = SyntheticSpec(n_items=9, k_true=3, n_draws=25, noise=0.4, seed=5)
        a, b = synthetic_draws(spec), synthetic_draws(spec)
        assert a.labels.shape == (25, 9)
        assert np.array_equal(a.labels, b.labels)
        c = synthetic_draws(SyntheticSpec(n_items=9, k_true=3, n_draws=25, noise=0.4, seed=6))
        assert not np.array_equal(a.labels, c.labels)

    def test_zero_noise_repeats_base(self):
        spec = SyntheticSpec(n_items=7, k_true=3, n_draws=12, noise=0.0, seed=0)
        d = synthetic_draws(spec)
        base = canonicalize(np.arange(7) % 3 + 1)
        for row in d.labels:
            assert np.array_equal(row, base)

    def test_noise_produces_variation(self):
        spec = SyntheticSpec(n_items=10, k_true=3, n_draws=50, noise=0.8, seed=1)
        d = synthetic_draws(spec)
        assert len(np.unique(d.labels, axis=0)) > 10
