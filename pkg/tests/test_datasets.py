import math

import numpy as np
import pytest

from diffood.datasets import (Dataset, embed_points_as_images, export_csv,
                              gen_checker_texture, gen_gaussian_ring,
                              gen_ring_image, gen_two_moons, gen_uniform_box,
                              load_split, make_far_ood_split, make_near_ood_split,
                              save_split)


class TestRing:
    def test_component_means(self):
        ds = gen_gaussian_ring(k=8, radius=4.0, sigma=0.3, n=8000, seed=1,
                               standardize=False)
        for label in range(8):
            pts = ds.samples[ds.labels == label]
            angle = 2 * math.pi * label / 8
            center = 4.0 * np.array([math.cos(angle), math.sin(angle)])
            tol = 3 * 0.3 / math.sqrt(len(pts))
            assert np.linalg.norm(pts.mean(axis=0) - center) < 3 * tol

    def test_seed_reproducibility(self):
        a = gen_gaussian_ring(k=4, radius=2.0, sigma=0.2, n=100, seed=9)
        b = gen_gaussian_ring(k=4, radius=2.0, sigma=0.2, n=100, seed=9)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_single_component_rejected(self):
        with pytest.raises(ValueError):
            gen_gaussian_ring(k=1, radius=1.0, sigma=0.1, n=10, seed=0)

    def test_standardized_overall(self):
        ds = gen_gaussian_ring(k=8, radius=4.0, sigma=0.3, n=5000, seed=2)
        assert abs(ds.samples.mean()) < 1e-12
        assert abs(ds.samples.std() - 1.0) < 1e-12
        assert "standardize_mean" in ds.params


class TestMoons:
    def test_noiseless_points_on_half_circles(self):
        ds = gen_two_moons(n=200, noise=0.0, seed=3, standardize=False)
        outer = ds.samples[ds.labels == 0]
        inner = ds.samples[ds.labels == 1]
        np.testing.assert_allclose(np.linalg.norm(outer, axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(
            np.linalg.norm(inner - np.array([1.0, 0.5]), axis=1), 1.0, atol=1e-9)

    def test_seeded(self):
        a = gen_two_moons(n=50, noise=0.1, seed=4)
        b = gen_two_moons(n=50, noise=0.1, seed=4)
        assert a.samples.tobytes() == b.samples.tobytes()


class TestBox:
    def test_per_coordinate_variance(self):
        ds = gen_uniform_box(n=2000, half_width=1.0, seed=5, standardize=False)
        target = 1.0 / 3.0
        se = math.sqrt((1.0 / 5.0 - 1.0 / 9.0) / ds.n)
        for j in range(2):
            assert abs(ds.samples[:, j].var() - target) <= 3 * se


class TestChecker:
    def test_noiseless_patches_have_two_values(self):
        ds = gen_checker_texture(n=20, grid=2, side=8, seed=6, noise=0.0,
                                 standardize=False)
        for row in ds.samples:
            assert len(np.unique(row)) == 2

    def test_values_in_unit_interval(self):
        ds = gen_checker_texture(n=50, grid=2, side=8, seed=7, noise=0.1,
                                 standardize=False)
        assert ds.samples.min() >= 0.0
        assert ds.samples.max() <= 1.0

    def test_dimensions(self):
        ds = gen_checker_texture(n=5, grid=4, side=8, seed=8)
        assert ds.dim == 64


class TestRingImage:
    def test_shares_ring_draws(self):
        ring = gen_gaussian_ring(k=8, radius=4.0, sigma=0.3, n=64, seed=13,
                                 standardize=False)
        imgs = gen_ring_image(k=8, radius=4.0, sigma=0.3, n=64, seed=13, side=8)
        assert np.array_equal(imgs.labels, ring.labels)
        assert imgs.dim == 64

    def test_embedding_is_smooth_in_position(self):
        a = embed_points_as_images(np.array([[0.0, 0.0]]), 8, extent=5.0)
        b = embed_points_as_images(np.array([[0.05, 0.0]]), 8, extent=5.0)
        c = embed_points_as_images(np.array([[3.0, 0.0]]), 8, extent=5.0)
        assert np.abs(a - b).max() < np.abs(a - c).max()
        assert a.min() >= 0.0 and a.max() <= 1.0


class TestNearSplit:
    @pytest.fixture
    def ring(self):
        return gen_gaussian_ring(k=8, radius=4.0, sigma=0.3, n=2000, seed=10)

    def test_holdout_absent_from_train(self, ring):
        split = make_near_ood_split(ring, {0}, seed=1)
        assert 0 not in set(split.train.labels.tolist())
        assert set(split.test_ood.labels.tolist()) == {0}

    def test_counts_partition_members(self, ring):
        split = make_near_ood_split(ring, {0}, seed=1)
        non_holdout = int((ring.labels != 0).sum())
        assert split.train.n + split.val_id.n + split.test_id.n == non_holdout
        assert split.test_ood.n == int((ring.labels == 0).sum())

    def test_stratified_train_shares(self, ring):
        split = make_near_ood_split(ring, {0}, seed=1)
        kept = ring.labels[ring.labels != 0]
        for label in range(1, 8):
            overall = (kept == label).mean()
            in_train = (split.train.labels == label).mean()
            assert abs(in_train - overall) <= 0.02

    def test_holdout_must_be_proper_subset(self, ring):
        with pytest.raises(ValueError):
            make_near_ood_split(ring, set(range(8)), seed=1)
        with pytest.raises(ValueError):
            make_near_ood_split(ring, set(), seed=1)

    def test_train_only_standardization(self, ring):
        split = make_near_ood_split(ring, {0}, seed=1)
        assert abs(split.train.samples.mean()) < 1e-12
        assert abs(split.train.samples.std() - 1.0) < 1e-12
        # other members use the train statistics, not their own
        assert abs(split.test_ood.samples.mean()) > 1e-6
        mean = split.provenance["train_mean"]
        std = split.provenance["train_std"]
        assert split.val_id.params["split_mean"] == mean
        assert split.val_id.params["split_std"] == std

    def test_reproducible(self, ring):
        a = make_near_ood_split(ring, {0}, seed=2)
        b = make_near_ood_split(ring, {0}, seed=2)
        assert a.train.samples.tobytes() == b.train.samples.tobytes()
        assert a.test_ood.samples.tobytes() == b.test_ood.samples.tobytes()


class TestFarSplit:
    def test_single_source_pool(self):
        moons = gen_two_moons(n=400, noise=0.1, seed=11)
        box = gen_uniform_box(n=100, half_width=2.0, seed=11)
        split = make_far_ood_split(moons, [box], seed=3)
        assert split.test_ood.n == 100
        assert split.kind == "far"
        assert split.provenance["ood_sources"][0]["name"] == "box"

    def test_two_sources_sizes_and_tags(self):
        moons = gen_two_moons(n=400, noise=0.1, seed=11)
        a = gen_uniform_box(n=100, half_width=2.0, seed=11)
        b = gen_uniform_box(n=50, half_width=3.0, seed=12)
        split = make_far_ood_split(moons, [a, b], seed=3)
        assert split.test_ood.n == 150
        assert (split.test_ood.labels == 0).sum() == 100
        assert (split.test_ood.labels == 1).sum() == 50

    def test_dimension_mismatch_needs_adapter(self):
        moons = gen_two_moons(n=200, noise=0.1, seed=11)
        imgs = gen_checker_texture(n=40, grid=2, side=4, seed=11)
        with pytest.raises(ValueError):
            make_far_ood_split(moons, [imgs], seed=3)
        split = make_far_ood_split(moons, [imgs], seed=3,
                                   adapter=lambda x: x[:, :2])
        assert split.test_ood.dim == 2

    def test_ood_standardized_with_id_stats(self):
        moons = gen_two_moons(n=400, noise=0.1, seed=11)
        box = gen_uniform_box(n=100, half_width=2.0, seed=11)
        split = make_far_ood_split(moons, [box], seed=3)
        assert abs(split.train.samples.mean()) < 1e-12
        assert split.test_ood.params["split_mean"] == split.provenance["train_mean"]


def test_split_roundtrip(tmp_path):
    ring = gen_gaussian_ring(k=4, radius=2.0, sigma=0.2, n=400, seed=14)
    split = make_near_ood_split(ring, {1}, seed=4)
    path = tmp_path / "split.sbdt"
    save_split(path, split)
    loaded = load_split(path)
    assert loaded.kind == split.kind
    for tag in ("train", "val_id", "test_id", "test_ood"):
        got, want = getattr(loaded, tag), getattr(split, tag)
        assert got.samples.tobytes() == want.samples.tobytes()
        assert got.labels.tolist() == want.labels.tolist()
    assert loaded.provenance["holdout"] == [1]


def test_export_csv(tmp_path):
    ring = gen_gaussian_ring(k=4, radius=2.0, sigma=0.2, n=200, seed=15)
    split = make_near_ood_split(ring, {1}, seed=5)
    path = tmp_path / "data.csv"
    export_csv(path, split)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x0,x1,label,split"
    assert len(lines) == 1 + ring.n


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(samples=np.zeros((3, 2)), labels=np.zeros(4, dtype=int), name="bad")
    with pytest.raises(ValueError):
        Dataset(samples=np.zeros(3), labels=np.zeros(3, dtype=int), name="bad")
