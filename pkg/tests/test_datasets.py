"""IDX parsing, synthetic blobs, Dirichlet sharding."""

import numpy as np
import pytest

from slimfl.datasets import (
    Dataset,
    class_means,
    dirichlet_partition,
    load_idx,
    synth_dataset,
    write_idx,
)

RNG = np.random.default_rng


class TestIdxFormat:
    def test_golden_fixture_pixels_recovered(self, tmp_path):
        images = np.zeros((2, 3, 3), dtype=np.uint8)
        images[0, 0, 0] = 255
        images[0, 2, 1] = 128
        images[1, 1, 1] = 17
        labels = np.array([4, 9], dtype=np.uint8)
        write_idx(images, labels, tmp_path / "img", tmp_path / "lab")
        ds = load_idx(tmp_path / "img", tmp_path / "lab")
        assert len(ds) == 2
        assert ds.x.shape == (2, 9)
        assert ds.x[0, 0] == 1.0
        assert ds.x[0, 7] == 128 / 255
        assert ds.x[1, 4] == 17 / 255
        np.testing.assert_array_equal(ds.y, [4, 9])

    def test_byte_level_round_trip(self, tmp_path):
        rng = RNG(0)
        images = rng.integers(0, 256, size=(5, 4, 6), dtype=np.uint8)
        labels = rng.integers(0, 10, size=5, dtype=np.uint8)
        write_idx(images, labels, tmp_path / "img", tmp_path / "lab")
        ds = load_idx(tmp_path / "img", tmp_path / "lab")
        recovered = np.round(ds.x * 255).astype(np.uint8).reshape(5, 4, 6)
        np.testing.assert_array_equal(recovered, images)
        np.testing.assert_array_equal(ds.y, labels)

    def test_bad_image_magic_names_field(self, tmp_path):
        write_idx(
            np.zeros((1, 2, 2), dtype=np.uint8),
            np.zeros(1, dtype=np.uint8),
            tmp_path / "img",
            tmp_path / "lab",
        )
        data = bytearray((tmp_path / "img").read_bytes())
        data[3] = 0xFF
        (tmp_path / "img").write_bytes(bytes(data))
        with pytest.raises(ValueError, match="image magic"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_truncated_image_data_rejected(self, tmp_path):
        write_idx(
            np.zeros((2, 2, 2), dtype=np.uint8),
            np.zeros(2, dtype=np.uint8),
            tmp_path / "img",
            tmp_path / "lab",
        )
        data = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(data[:-3])
        with pytest.raises(ValueError, match="image data"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_count_mismatch_rejected(self, tmp_path):
        write_idx(
            np.zeros((2, 2, 2), dtype=np.uint8),
            np.zeros(2, dtype=np.uint8),
            tmp_path / "img",
            tmp_path / "lab",
        )
        write_idx(
            np.zeros((3, 2, 2), dtype=np.uint8),
            np.zeros(3, dtype=np.uint8),
            tmp_path / "img3",
            tmp_path / "lab3",
        )
        with pytest.raises(ValueError, match="mismatch"):
            load_idx(tmp_path / "img", tmp_path / "lab3")


class TestSynthDataset:
    def test_labels_exactly_balanced(self):
        ds = synth_dataset(7, 13, 5, RNG(1))
        counts = np.bincount(ds.y, minlength=7)
        np.testing.assert_array_equal(counts, 13)

    def test_separable_limit_is_linearly_classifiable(self):
        # spread -> 0 collapses every class onto its center
        ds = synth_dataset(6, 20, 10, RNG(2), spread=1e-9)
        means = {}
        for c in range(6):
            means[c] = ds.x[ds.y == c].mean(axis=0)
        centers = np.stack([means[c] for c in range(6)])
        predicted = np.argmin(
            ((ds.x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1
        )
        assert (predicted == ds.y).mean() == 1.0

    def test_shared_means_keep_train_and_test_consistent(self):
        # a linear model trained on one draw classifies a fresh draw well
        rng = RNG(3)
        means = class_means(10, 20, rng)
        train = synth_dataset(10, 100, 20, RNG(4), spread=0.1, means=means)
        test = synth_dataset(10, 30, 20, RNG(5), spread=0.1, means=means)
        centers = np.stack([train.x[train.y == c].mean(axis=0) for c in range(10)])
        predicted = np.argmin(
            ((test.x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1
        )
        assert (predicted == test.y).mean() > 0.95


class TestDirichletPartition:
    def test_single_device_gets_everything(self):
        labels = RNG(6).integers(0, 10, size=200)
        shards = dirichlet_partition(labels, 1, 1.0, RNG(7))
        assert len(shards) == 1
        np.testing.assert_array_equal(np.sort(shards[0].indices), np.arange(200))

    def test_partition_is_disjoint_and_covering(self):
        labels = RNG(8).integers(0, 10, size=500)
        for alpha in (0.1, 1.0, 10.0):
            shards = dirichlet_partition(labels, 7, alpha, RNG(9))
            merged = np.concatenate([s.indices for s in shards])
            assert len(merged) == 500
            np.testing.assert_array_equal(np.sort(merged), np.arange(500))
            assert all(len(s) > 0 for s in shards)

    def test_histograms_match_indices(self):
        labels = RNG(10).integers(0, 5, size=300)
        shards = dirichlet_partition(labels, 4, 0.5, RNG(11))
        for shard in shards:
            np.testing.assert_array_equal(
                shard.class_histogram, np.bincount(labels[shard.indices], minlength=5)
            )

    def test_concentration_limit_approaches_global_histogram(self):
        labels = np.repeat(np.arange(10), 1000)
        shards = dirichlet_partition(labels, 5, 1e6, RNG(12))
        global_frac = np.full(10, 0.1)
        for shard in shards:
            frac = shard.class_histogram / len(shard)
            assert np.abs(frac - global_frac).max() / 0.1 < 0.05

    def test_low_alpha_skews_class_distributions(self):
        # mean per-shard label entropy drops when alpha shrinks
        labels = np.repeat(np.arange(10), 300)

        def mean_entropy(alpha, seed):
            shards = dirichlet_partition(labels, 10, alpha, RNG(seed))
            out = []
            for s in shards:
                p = s.class_histogram / len(s)
                p = p[p > 0]
                out.append(float(-(p * np.log(p)).sum()))
            return np.mean(out)

        skewed = [mean_entropy(0.1, 100 + i) for i in range(100)]
        uniform = [mean_entropy(10.0, 200 + i) for i in range(100)]
        assert np.mean(skewed) < np.mean(uniform)

    def test_deterministic_under_fixed_seed(self):
        labels = RNG(13).integers(0, 10, size=400)
        a = dirichlet_partition(labels, 6, 0.3, RNG(42))
        b = dirichlet_partition(labels, 6, 0.3, RNG(42))
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.indices, sb.indices)

    def test_more_devices_than_samples_rejected(self):
        with pytest.raises(ValueError, match="devices"):
            dirichlet_partition(np.zeros(3, dtype=int), 5, 1.0, RNG(14))

    def test_dataset_label_count_consistency(self):
        with pytest.raises(ValueError, match="labels"):
            Dataset(np.zeros((3, 2)), np.zeros(4, dtype=np.int64), 2)
