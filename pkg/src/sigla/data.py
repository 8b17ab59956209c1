"""Synthetic non-IID multi-modal vehicular datasets.

Each vehicle gets a feature matrix (gps | lidar-proxy | image-proxy
column blocks) and sector labels. Vehicles are planted into distribution
clusters: all vehicles of a cluster share per-sector Gaussian feature
means, while label marginals are skewed per vehicle by a Dirichlet draw.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .rng import TAG_DATA, TAG_VEHICLE, spawn

GPS_DIM = 2

CATEGORIES = (
    "los_passing",
    "nlos_pedestrian",
    "nlos_static_car",
    "nlos_moving_car",
)

# split ratios: train / val / test
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

_DATA_MAGIC = b"SGLD"
_DATA_VERSION = 1


@dataclass(frozen=True, eq=False)
class SampleSet:
    """A bare (features, labels) pair, e.g. one split of a dataset."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.ascontiguousarray(self.features, dtype=np.float64)
        )
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.int64))
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels length mismatch")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class VehicleDataset:
    vehicle_id: int
    features: np.ndarray  # (n_samples, feature_dim)
    labels: np.ndarray  # (n_samples,)
    category: str
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    source_seed: int | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or len(feats) != len(labels):
            raise ValueError("features must be (n_samples, dim) matching labels")
        if len(labels) and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if self.category not in CATEGORIES and self.category != "combined":
            raise ValueError(f"unknown category {self.category!r}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        splits = []
        for name in ("train_idx", "val_idx", "test_idx"):
            idx = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, idx)
            splits.append(idx)
        combined = np.concatenate(splits)
        if len(np.unique(combined)) != len(combined) or len(combined) != len(labels):
            raise ValueError("splits must be disjoint and cover all samples")

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def split_set(self, name: str) -> SampleSet:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return SampleSet(self.features[idx], self.labels[idx])

    @property
    def train_set(self) -> SampleSet:
        return self.split_set("train")

    @property
    def val_set(self) -> SampleSet:
        return self.split_set("val")

    @property
    def test_set(self) -> SampleSet:
        return self.split_set("test")


@dataclass(frozen=True)
class GenConfig:
    n_vehicles: int = 10
    n_sectors: int = 34
    samples_per_vehicle: int = 2000
    dirichlet_alpha: float = 1.0
    n_planted_clusters: int = 4
    noise_sigma: float = 0.5
    cluster_spread: float = 2.0
    sector_spread: float = 2.0
    lidar_dim: int = 16
    image_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_vehicles < 1 or self.n_sectors < 1:
            raise ValueError("n_vehicles and n_sectors must be positive")
        if self.samples_per_vehicle < 10:
            raise ValueError("samples_per_vehicle must be >= 10 to allow splits")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if not 1 <= self.n_planted_clusters <= self.n_vehicles:
            raise ValueError("need 1 <= n_planted_clusters <= n_vehicles")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.lidar_dim < 1 or self.image_dim < 1:
            raise ValueError("feature block widths must be positive")

    @property
    def feature_dim(self) -> int:
        return GPS_DIM + self.lidar_dim + self.image_dim


def _split_indices(rng: np.random.Generator, n: int):
    perm = rng.permutation(n)
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train : n_train + n_val])
    test = np.sort(perm[n_train + n_val :])
    return train, val, test


def generate(cfg: GenConfig):
    """Generate per-vehicle datasets with planted distribution clusters.

    Returns (datasets, planted): vehicle i belongs to planted cluster
    ``planted[i] = i % n_planted_clusters``. Each cluster has its own
    per-sector Gaussian feature means, built from mutually orthogonal
    cluster directions scaled by ``cluster_spread`` plus per-sector unit
    offsets scaled by ``sector_spread``. Deterministic given the seed.
    """
    rng = spawn(cfg.seed, TAG_DATA)
    dim = cfg.feature_dim
    n_clusters = cfg.n_planted_clusters

    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    cluster_dirs = basis[:, :n_clusters].T  # orthonormal rows
    offsets = rng.standard_normal((n_clusters, cfg.n_sectors, dim))
    offsets /= np.linalg.norm(offsets, axis=2, keepdims=True)
    means = (
        cfg.cluster_spread * cluster_dirs[:, None, :] + cfg.sector_spread * offsets
    )  # (cluster, sector, dim)

    planted = np.arange(cfg.n_vehicles, dtype=np.int64) % n_clusters
    datasets = []
    for i in range(cfg.n_vehicles):
        rv = spawn(cfg.seed, TAG_DATA, TAG_VEHICLE, i)
        marginal = rv.dirichlet(np.full(cfg.n_sectors, cfg.dirichlet_alpha))
        labels = rv.choice(cfg.n_sectors, size=cfg.samples_per_vehicle, p=marginal)
        cluster = int(planted[i])
        feats = means[cluster, labels] + cfg.noise_sigma * rv.standard_normal(
            (cfg.samples_per_vehicle, dim)
        )
        train, val, test = _split_indices(rv, cfg.samples_per_vehicle)
        datasets.append(
            VehicleDataset(
                vehicle_id=i,
                features=feats,
                labels=labels,
                category=CATEGORIES[cluster % len(CATEGORIES)],
                train_idx=train,
                val_idx=val,
                test_idx=test,
                source_seed=cfg.seed,
            )
        )
    return datasets, planted


def global_test_set(datasets) -> VehicleDataset:
    """Concatenate every vehicle's test split into one combined dataset."""
    if not datasets:
        raise ValueError("no datasets given")
    feats = np.concatenate([d.features[d.test_idx] for d in datasets])
    labels = np.concatenate([d.labels[d.test_idx] for d in datasets])
    n = len(labels)
    return VehicleDataset(
        vehicle_id=-1,
        features=feats,
        labels=labels,
        category="combined",
        train_idx=np.empty(0, dtype=np.int64),
        val_idx=np.empty(0, dtype=np.int64),
        test_idx=np.arange(n, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# export / import


def save_dataset(ds: VehicleDataset, path) -> None:
    header = {
        "vehicle_id": ds.vehicle_id,
        "category": ds.category,
        "n_samples": ds.n_samples,
        "feature_dim": ds.feature_dim,
        "seed": ds.source_seed,
        "splits": {
            "train": ds.train_idx.tolist(),
            "val": ds.val_idx.tolist(),
            "test": ds.test_idx.tolist(),
        },
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_DATA_MAGIC)
        f.write(struct.pack("<II", _DATA_VERSION, len(blob)))
        f.write(blob)
        f.write(ds.features.astype("<f8").tobytes())
        f.write(ds.labels.astype("<i4").tobytes())


def load_dataset(path) -> VehicleDataset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _DATA_MAGIC:
            raise ValueError(f"not a dataset file: bad magic {magic!r}")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != _DATA_VERSION:
            raise ValueError(f"unsupported dataset format version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        n, dim = header["n_samples"], header["feature_dim"]
        feats = np.frombuffer(f.read(8 * n * dim), dtype="<f8").reshape(n, dim)
        labels = np.frombuffer(f.read(4 * n), dtype="<i4").astype(np.int64)
    return VehicleDataset(
        vehicle_id=header["vehicle_id"],
        features=feats,
        labels=labels,
        category=header["category"],
        train_idx=np.array(header["splits"]["train"], dtype=np.int64),
        val_idx=np.array(header["splits"]["val"], dtype=np.int64),
        test_idx=np.array(header["splits"]["test"], dtype=np.int64),
        source_seed=header["seed"],
    )


def save_dataset_csv(ds: VehicleDataset, path) -> None:
    """CSV alternative: '#'-prefixed metadata, then split,f0..fD-1,label rows."""
    split_of = np.empty(ds.n_samples, dtype=object)
    split_of[ds.train_idx] = "train"
    split_of[ds.val_idx] = "val"
    split_of[ds.test_idx] = "test"
    with open(path, "w", newline="") as f:
        f.write(f"# vehicle_id={ds.vehicle_id}\n")
        f.write(f"# category={ds.category}\n")
        f.write(f"# seed={ds.source_seed}\n")
        writer = csv.writer(f)
        writer.writerow(["split", *[f"f{j}" for j in range(ds.feature_dim)], "label"])
        for i in range(ds.n_samples):
            writer.writerow(
                [split_of[i], *[repr(float(v)) for v in ds.features[i]], int(ds.labels[i])]
            )


def load_dataset_csv(path) -> VehicleDataset:
    meta = {}
    rows = []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            else:
                rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    dim = len(header) - 2
    splits, feats, labels = [], [], []
    for row in reader:
        splits.append(row[0])
        feats.append([float(v) for v in row[1 : 1 + dim]])
        labels.append(int(row[-1]))
    splits = np.array(splits)
    seed = meta.get("seed")
    return VehicleDataset(
        vehicle_id=int(meta["vehicle_id"]),
        features=np.array(feats, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        category=meta["category"],
        train_idx=np.flatnonzero(splits == "train"),
        val_idx=np.flatnonzero(splits == "val"),
        test_idx=np.flatnonzero(splits == "test"),
        source_seed=None if seed in (None, "None") else int(seed),
    )
