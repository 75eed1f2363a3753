"""Synthetic benchmark data: generators, Near/Far-OOD splits, persistence.

All generators are seeded and standardize their output to zero mean and
unit variance over all entries (raw geometry is available via
``standardize=False``). Split constructors re-standardize every member
with statistics computed on the training portion only, so nothing from
validation, test or OOD data leaks into preprocessing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.datasets import make_moons

from . import sbdt
from .rng import stream


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2:
            raise ValueError("samples must be (n, d)")
        if labels.shape != (samples.shape[0],):
            raise ValueError("labels must match sample count")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class BenchmarkSplit:
    train: Dataset
    val_id: Dataset
    test_id: Dataset
    test_ood: Dataset
    kind: str                      # "near" or "far"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("near", "far"):
            raise ValueError(f"kind must be near/far, got {self.kind!r}")
        if self.kind == "near":
            held_in = set(np.unique(self.train.labels))
            held_out = set(np.unique(self.test_ood.labels))
            if held_in & held_out:
                raise ValueError("near-OOD requires disjoint train/ood label sets")
        dims = {m.dim for m in (self.train, self.val_id, self.test_id, self.test_ood)}
        if len(dims) != 1:
            raise ValueError("split members must share dimensionality")


def _standardize_overall(samples: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(samples.mean())
    std = float(samples.std())
    if std == 0.0:
        std = 1.0
    return (samples - mean) / std, mean, std


def _finish(samples, labels, name, params, seed, standardize) -> Dataset:
    params = dict(params)
    if standardize:
        samples, mean, std = _standardize_overall(samples)
        params["standardize_mean"] = mean
        params["standardize_std"] = std
    return Dataset(samples=samples, labels=labels, name=name, params=params, seed=seed)


def gen_gaussian_ring(k: int, radius: float, sigma: float, n: int, seed: int,
                      standardize: bool = True) -> Dataset:
    """Equal-weight Gaussian components with means spaced around a circle."""
    if k < 2:
        raise ValueError("need at least 2 components")
    if sigma <= 0:
        raise ValueError("component spread must be positive")
    rng = stream(seed, "data/ring")
    labels = rng.integers(0, k, size=n)
    angles = 2.0 * math.pi * labels / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    samples = centers + sigma * rng.standard_normal((n, 2))
    return _finish(samples, labels, "ring",
                   {"k": k, "radius": radius, "sigma": sigma, "n": n},
                   seed, standardize)


def gen_two_moons(n: int, noise: float, seed: int, standardize: bool = True) -> Dataset:
    samples, labels = make_moons(n_samples=n, noise=noise if noise > 0 else None,
                                 random_state=stream(seed, "data/moons-seed")
                                 .integers(0, 2**31 - 1))
    return _finish(samples.astype(np.float64), labels, "moons",
                   {"noise": noise, "n": n}, seed, standardize)


def gen_uniform_box(n: int, half_width: float, seed: int, dim: int = 2,
                    standardize: bool = True) -> Dataset:
    rng = stream(seed, "data/box")
    samples = rng.uniform(-half_width, half_width, size=(n, dim))
    return _finish(samples, np.zeros(n, dtype=np.int64), "box",
                   {"half_width": half_width, "n": n, "dim": dim}, seed, standardize)


def gen_checker_texture(n: int, grid: int, side: int, seed: int,
                        noise: float = 0.05, standardize: bool = True) -> Dataset:
    """Flattened side x side grayscale checkerboard patches.

    Each patch is the grid x grid board rendered at pixel resolution with a
    continuous random phase shift and random polarity, plus optional clipped
    Gaussian noise; pixel values stay in [0, 1]. With noise=0 a patch has
    exactly two distinct values. The continuous shifts make the patch family
    a smooth two-parameter manifold rather than a handful of discrete
    patterns.
    """
    if grid < 1 or side < grid:
        raise ValueError("need side >= grid >= 1")
    rng = stream(seed, "data/checker")
    cell = side / grid
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    patches = np.empty((n, side, side))
    labels = np.empty(n, dtype=np.int64)
    for idx in range(n):
        di, dj = rng.uniform(0.0, side, size=2)
        invert = int(rng.integers(0, 2))
        board = ((np.floor((ii + di) / cell) + np.floor((jj + dj) / cell)) % 2)
        if invert:
            board = 1.0 - board
        patches[idx] = 0.25 + 0.5 * board
        labels[idx] = invert
    if noise > 0:
        patches = np.clip(patches + noise * rng.standard_normal(patches.shape), 0.0, 1.0)
    samples = patches.reshape(n, side * side)
    return _finish(samples, labels, "checker",
                   {"grid": grid, "side": side, "noise": noise, "n": n},
                   seed, standardize)


def embed_points_as_images(points: np.ndarray, side: int, extent: float,
                           period: float = 4.0, amplitude: float = 0.25,
                           sharpness: float = 3.0) -> np.ndarray:
    """Render 2-d points as side x side grayscale phase patterns.

    Each coordinate becomes the phase of a softened checkerboard along one
    image axis: the product of two tanh-saturated cosines, so cell
    interiors sit at the same two gray levels as a hard checkerboard while
    edges stay smooth in the point position. Values lie in [0, 1].
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("phase embedding expects (n, 2) points")
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    phase_x = points[:, 0] / (2.0 * extent)
    phase_y = points[:, 1] / (2.0 * extent)
    norm = math.tanh(sharpness)
    gx = np.tanh(sharpness * np.cos(
        2.0 * math.pi * (jj[None, :, :] / period + phase_x[:, None, None]))) / norm
    gy = np.tanh(sharpness * np.cos(
        2.0 * math.pi * (ii[None, :, :] / period + phase_y[:, None, None]))) / norm
    imgs = 0.5 + amplitude * gx * gy
    return np.clip(imgs, 0.0, 1.0).reshape(points.shape[0], side * side)


def gen_ring_image(k: int, radius: float, sigma: float, n: int, seed: int,
                   side: int = 8, standardize: bool = True) -> Dataset:
    """Gaussian-ring samples rendered as phase-pattern images."""
    ring = gen_gaussian_ring(k, radius, sigma, n, seed, standardize=False)
    extent = radius + 4.0 * sigma
    samples = embed_points_as_images(ring.samples, side, extent)
    return _finish(samples, ring.labels, "ring_image",
                   {"k": k, "radius": radius, "sigma": sigma, "n": n, "side": side},
                   seed, standardize)


GENERATORS = {
    "ring": gen_gaussian_ring,
    "moons": gen_two_moons,
    "box": gen_uniform_box,
    "checker": gen_checker_texture,
    "ring_image": gen_ring_image,
}


def _apply_stats(ds: Dataset, mean: float, std: float) -> Dataset:
    params = dict(ds.params)
    params["split_mean"] = mean
    params["split_std"] = std
    return replace(ds, samples=(ds.samples - mean) / std, params=params)


def make_near_ood_split(ds: Dataset, holdout: set[int],
                        fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
                        seed: int = 0) -> BenchmarkSplit:
    """Hold out whole classes as OOD; split the rest stratified by label.

    Standardization statistics come from the train portion only and are
    applied to every member, OOD included.
    """
    holdout = set(int(h) for h in holdout)
    all_labels = set(np.unique(ds.labels).tolist())
    if not holdout:
        raise ValueError("holdout must be nonempty")
    if not holdout < all_labels:
        raise ValueError("holdout must be a proper subset of the label set")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = stream(seed, "split/near")
    parts: dict[str, list[int]] = {"train": [], "val_id": [], "test_id": []}
    ood_idx = []
    for label in sorted(all_labels):
        idx = np.flatnonzero(ds.labels == label)
        if label in holdout:
            ood_idx.extend(idx.tolist())
            continue
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(fractions[0] * idx.size))
        n_val = int(round(fractions[1] * idx.size))
        parts["train"].extend(idx[:n_train].tolist())
        parts["val_id"].extend(idx[n_train:n_train + n_val].tolist())
        parts["test_id"].extend(idx[n_train + n_val:].tolist())

    def subset(indices, tag):
        indices = np.asarray(sorted(indices), dtype=np.int64)
        return Dataset(ds.samples[indices], ds.labels[indices],
                       f"{ds.name}/{tag}", dict(ds.params), ds.seed)

    members = {tag: subset(idx, tag) for tag, idx in parts.items()}
    ood = subset(ood_idx, "test_ood")
    _, mean, std = _standardize_overall(members["train"].samples)
    members = {tag: _apply_stats(m, mean, std) for tag, m in members.items()}
    ood = _apply_stats(ood, mean, std)
    provenance = {
        "kind": "near", "source": ds.name, "holdout": sorted(holdout),
        "fractions": list(fractions), "split_seed": seed,
        "generator_params": _json_safe(ds.params), "data_seed": ds.seed,
        "train_mean": mean, "train_std": std,
    }
    return BenchmarkSplit(train=members["train"], val_id=members["val_id"],
                          test_id=members["test_id"], test_ood=ood,
                          kind="near", provenance=provenance)


def make_far_ood_split(id_ds: Dataset, ood_ds_list: list[Dataset],
                       fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
                       seed: int = 0, adapter=None) -> BenchmarkSplit:
    """ID data split three ways; OOD sources pooled with provenance tags.

    OOD sets of a different dimensionality are rejected unless ``adapter``
    maps their samples into the ID space. All members are standardized
    with ID-train statistics.
    """
    if not ood_ds_list:
        raise ValueError("need at least one OOD source")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    adapted = []
    for ood in ood_ds_list:
        if ood.dim != id_ds.dim:
            if adapter is None:
                raise ValueError(
                    f"OOD source {ood.name!r} has dim {ood.dim}, ID has {id_ds.dim}, "
                    "and no adapter was declared")
            samples = np.asarray(adapter(ood.samples), dtype=np.float64)
            if samples.shape != (ood.n, id_ds.dim):
                raise ValueError("adapter must produce ID-dimensional samples")
            ood = replace(ood, samples=samples)
        adapted.append(ood)
    rng = stream(seed, "split/far")
    idx = rng.permutation(id_ds.n)
    n_train = int(round(fractions[0] * id_ds.n))
    n_val = int(round(fractions[1] * id_ds.n))

    def subset(sub_idx, tag):
        sub_idx = np.asarray(sorted(sub_idx.tolist()), dtype=np.int64)
        return Dataset(id_ds.samples[sub_idx], id_ds.labels[sub_idx],
                       f"{id_ds.name}/{tag}", dict(id_ds.params), id_ds.seed)

    train = subset(idx[:n_train], "train")
    val_id = subset(idx[n_train:n_train + n_val], "val_id")
    test_id = subset(idx[n_train + n_val:], "test_id")
    pool = np.concatenate([o.samples for o in adapted], axis=0)
    source_labels = np.concatenate([np.full(o.n, i, dtype=np.int64)
                                    for i, o in enumerate(adapted)])
    ood = Dataset(pool, source_labels, "ood_pool",
                  {"sources": [o.name for o in adapted]}, seed)
    _, mean, std = _standardize_overall(train.samples)
    train, val_id, test_id = (_apply_stats(m, mean, std)
                              for m in (train, val_id, test_id))
    ood = _apply_stats(ood, mean, std)
    provenance = {
        "kind": "far", "id_source": id_ds.name,
        "ood_sources": [{"name": o.name, "n": o.n, "params": _json_safe(o.params)}
                        for o in adapted],
        "fractions": list(fractions), "split_seed": seed,
        "generator_params": _json_safe(id_ds.params), "data_seed": id_ds.seed,
        "train_mean": mean, "train_std": std,
    }
    return BenchmarkSplit(train=train, val_id=val_id, test_id=test_id,
                          test_ood=ood, kind="far", provenance=provenance)


def _json_safe(params: dict) -> dict:
    return json.loads(json.dumps(params))


SPLIT_MEMBERS = ("train", "val_id", "test_id", "test_ood")


def save_split(path, split: BenchmarkSplit) -> None:
    tensors = {}
    for tag in SPLIT_MEMBERS:
        member: Dataset = getattr(split, tag)
        tensors[f"{tag}/samples"] = member.samples
        tensors[f"{tag}/labels"] = member.labels.astype(np.float64)
    manifest = json.dumps({"kind": split.kind, "provenance": split.provenance,
                           "names": {tag: getattr(split, tag).name
                                     for tag in SPLIT_MEMBERS}},
                          sort_keys=True)
    sbdt.save_tensors(path, tensors, manifest)


def load_split(path) -> BenchmarkSplit:
    tensors, manifest_text = sbdt.load_tensors(path)
    meta = json.loads(manifest_text)
    members = {}
    for tag in SPLIT_MEMBERS:
        members[tag] = Dataset(
            samples=tensors[f"{tag}/samples"],
            labels=tensors[f"{tag}/labels"].astype(np.int64),
            name=meta["names"][tag])
    return BenchmarkSplit(**members, kind=meta["kind"], provenance=meta["provenance"])


def export_csv(path, split: BenchmarkSplit) -> None:
    """One row per sample across all members, with split and label columns."""
    dim = split.train.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dim)] + ["label", "split"])
        for tag in SPLIT_MEMBERS:
            member: Dataset = getattr(split, tag)
            for row, label in zip(member.samples, member.labels):
                writer.writerow([repr(v) for v in row] + [int(label), tag])
