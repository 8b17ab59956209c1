import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sigla.data import SampleSet, VehicleDataset
from sigla.nn import Architecture, DenseLayer, Model, build_model


def flat_model(widths, seed=0, activation="relu", names=None):
    """A branch-less model: all layers in the fusion chain.

    widths = (in, hidden..., out); the final layer is the softmax head.
    """
    rng = np.random.default_rng(seed)
    layers = []
    submodel_map = {}
    for i, (din, dout) in enumerate(zip(widths, widths[1:])):
        last = i == len(widths) - 2
        name = names[i] if names else (f"dense_{i}" if not last else "output")
        act = "softmax" if last else activation
        limit = np.sqrt(6.0 / (din + dout))
        layers.append(
            DenseLayer(name, rng.uniform(-limit, limit, (dout, din)), rng.uniform(-0.1, 0.1, dout), act)
        )
        submodel_map[name] = "fusion"
    return Model(tuple(layers), submodel_map, widths[-1])


def dataset_from_arrays(features, labels, train_frac=1.0, vehicle_id=0, seed=0):
    """Wrap arrays into a VehicleDataset; by default everything is train."""
    n = len(labels)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(train_frac * n))
    rest = perm[n_train:]
    half = len(rest) // 2
    return VehicleDataset(
        vehicle_id=vehicle_id,
        features=features,
        labels=labels,
        category="los_passing",
        train_idx=np.sort(perm[:n_train]),
        val_idx=np.sort(rest[:half]),
        test_idx=np.sort(rest[half:]),
    )


@pytest.fixture
def small_model():
    return flat_model((4, 6, 3), seed=7)


@pytest.fixture
def branch_model():
    return build_model(
        Architecture(
            gps_input=2,
            lidar_input=4,
            image_input=4,
            gps_hidden=(5, 3),
            lidar_hidden=(6, 4),
            image_hidden=(6, 4),
            fusion_hidden=(8,),
            n_sectors=5,
        ),
        seed=3,
    )


@pytest.fixture
def toy_samples():
    rng = np.random.default_rng(42)
    feats = rng.standard_normal((40, 4))
    labels = rng.integers(0, 3, size=40)
    return SampleSet(feats, labels)
