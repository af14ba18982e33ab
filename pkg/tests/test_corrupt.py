import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arflsim.corrupt import (
    CorruptionSpec,
    add_feature_noise,
    apply_corruption,
    corrupted_client_count,
    flip_labels,
    shuffle_labels,
)
from arflsim.datasets import ClientDataset


def client(rng, n=12, d=4, classes=5, client_id=0, unit=False):
    features = rng.uniform(0.0, 1.0, (n, d)) if unit else rng.normal(0.0, 1.0, (n, d))
    return ClientDataset(features, rng.integers(0, classes, n), client_id)


class TestShuffleLabels:
    def test_constant_labels_unchanged(self):
        data = ClientDataset(np.zeros((4, 2)), np.full(4, 3), 0)
        out = shuffle_labels(data, np.random.default_rng(0))
        np.testing.assert_array_equal(out.labels, data.labels)
        np.testing.assert_array_equal(out.features, data.features)

    def test_multiset_preserved(self):
        data = ClientDataset(np.zeros((3, 2)), np.array([0, 1, 2]), 0)
        out = shuffle_labels(data, np.random.default_rng(1))
        np.testing.assert_array_equal(np.sort(out.labels), [0, 1, 2])

    def test_seed_reproducible(self):
        rng = np.random.default_rng(7)
        data = client(rng, n=40)
        a = shuffle_labels(data, np.random.default_rng(123))
        b = shuffle_labels(data, np.random.default_rng(123))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_marks_corrupted(self):
        data = client(np.random.default_rng(2))
        assert shuffle_labels(data, np.random.default_rng(0)).is_corrupted


class TestFlipLabels:
    def test_single_class_histogram(self):
        rng = np.random.default_rng(3)
        data = client(rng, n=30, classes=5)
        out = flip_labels(data, np.random.default_rng(9), num_classes=5)
        values = np.unique(out.labels)
        assert values.shape == (1,)
        np.testing.assert_array_equal(out.features, data.features)

    def test_already_at_target_is_identity(self):
        target = int(np.random.default_rng(11).integers(2))
        data = ClientDataset(np.zeros((6, 2)), np.full(6, target), 0)
        out = flip_labels(data, np.random.default_rng(11), num_classes=2)
        np.testing.assert_array_equal(out.labels, data.labels)

    def test_seed_reproducible(self):
        data = client(np.random.default_rng(4))
        a = flip_labels(data, np.random.default_rng(5), num_classes=5)
        b = flip_labels(data, np.random.default_rng(5), num_classes=5)
        np.testing.assert_array_equal(a.labels, b.labels)


class TestFeatureNoise:
    def test_negligible_sigma_near_identity(self):
        rng = np.random.default_rng(5)
        features = rng.uniform(0.0, 1.0, (50, 3))
        features[0, 0], features[1, 1] = 0.0, 1.0  # span the full interval
        data = ClientDataset(features, rng.integers(0, 2, 50), 0)
        out = add_feature_noise(data, sigma=1e-12, rng=np.random.default_rng(6))
        np.testing.assert_allclose(out.features, data.features, atol=1e-9)

    def test_rescaled_to_unit_interval(self):
        data = client(np.random.default_rng(6), unit=True)
        out = add_feature_noise(data, sigma=0.7, rng=np.random.default_rng(7))
        assert out.features.min() == 0.0
        assert out.features.max() == 1.0
        np.testing.assert_array_equal(out.labels, data.labels)

    def test_seeded_and_spreads_concentrated_input(self):
        rng = np.random.default_rng(8)
        features = 0.5 + 0.05 * rng.standard_normal((100, 4))  # input std ~0.05 < 0.3
        features = np.clip(features, 0.0, 1.0)
        data = ClientDataset(features, rng.integers(0, 2, 100), 0)
        a = add_feature_noise(data, sigma=0.7, rng=np.random.default_rng(9))
        b = add_feature_noise(data, sigma=0.7, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(a.features, b.features)
        assert a.features.std() > data.features.std()


class TestApplyCorruption:
    def test_clean_is_identity(self):
        rng = np.random.default_rng(10)
        datasets = [client(rng, client_id=i) for i in range(4)]
        out = apply_corruption(datasets, CorruptionSpec("clean", seed=1))
        assert out == datasets
        assert not any(d.is_corrupted for d in out)

    def test_exact_count_flagged(self):
        rng = np.random.default_rng(11)
        datasets = [client(rng, client_id=i, unit=True) for i in range(10)]
        out = apply_corruption(datasets, CorruptionSpec("noisy", fraction=0.5, seed=2))
        assert sum(d.is_corrupted for d in out) == 5

    def test_same_clients_across_runs(self):
        rng = np.random.default_rng(12)
        datasets = [client(rng, client_id=i) for i in range(10)]
        spec = CorruptionSpec("shuffling", fraction=0.3, seed=3)
        a = {d.client_id for d in apply_corruption(datasets, spec) if d.is_corrupted}
        b = {d.client_id for d in apply_corruption(datasets, spec) if d.is_corrupted}
        assert a == b
        assert len(a) == 3

    def test_selection_independent_of_scenario(self):
        rng = np.random.default_rng(13)
        datasets = [client(rng, client_id=i, unit=True) for i in range(10)]
        picked = {}
        for scenario in ("shuffling", "flipping", "noisy"):
            spec = CorruptionSpec(scenario, fraction=0.3, seed=4)
            out = apply_corruption(datasets, spec, num_classes=5)
            picked[scenario] = {d.client_id for d in out if d.is_corrupted}
        assert picked["shuffling"] == picked["flipping"] == picked["noisy"]

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError):
            CorruptionSpec("poison")

    def test_count_rounding(self):
        assert corrupted_client_count(0.3, 10) == 3
        assert corrupted_client_count(0.5, 10) == 5
        assert corrupted_client_count(0.5, 5) == 3  # halves round up
        assert corrupted_client_count(0.0, 7) == 0
        assert corrupted_client_count(1.0, 7) == 7


@given(st.integers(0, 2**32 - 1), st.sampled_from(["shuffling", "flipping", "noisy"]))
@settings(max_examples=50, deadline=None)
def test_corruption_preserves_shape_and_identity(seed, scenario):
    rng = np.random.default_rng(seed)
    datasets = [client(rng, n=int(rng.integers(2, 15)), client_id=i, unit=True) for i in range(6)]
    spec = CorruptionSpec(scenario, fraction=0.5, noise_sigma=0.7, seed=seed)
    out = apply_corruption(datasets, spec, num_classes=5)
    assert [d.client_id for d in out] == [d.client_id for d in datasets]
    assert [d.num_samples for d in out] == [d.num_samples for d in datasets]
    assert [d.input_dim for d in out] == [d.input_dim for d in datasets]
    for before, after in zip(datasets, out):
        if scenario == "shuffling" and after.is_corrupted:
            np.testing.assert_array_equal(np.sort(after.labels), np.sort(before.labels))
        if scenario == "noisy" and after.is_corrupted:
            assert after.features.min() >= 0.0
            assert after.features.max() <= 1.0
