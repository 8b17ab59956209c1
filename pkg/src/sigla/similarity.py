"""Model-to-model similarity via centered kernel alignment.

Similarity between two vehicles is the mean CKA of their layer weight
matrices (rows = output units) over a chosen layer set. CKA normalises
the biased HSIC estimator computed with a polynomial kernel, giving a
score in [0, 1]: 1 for functionally identical layers, 0 for statistically
independent ones.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import _backend as K
from .nn import Model


class DegenerateRepresentationWarning(UserWarning):
    """CKA asked to normalise a representation with zero self-HSIC."""


@dataclass(frozen=True)
class KernelConfig:
    """Polynomial kernel k(x, y) = (x . y + c) ** d."""

    c: float = 1.0
    d: int = 2

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("kernel offset c must be non-negative")
        if self.d < 1:
            raise ValueError("kernel degree d must be >= 1")


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Symmetric per-pair CKA scores in [0, 1] with unit diagonal."""

    values: np.ndarray
    layer_set: tuple[str, ...]

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.allclose(vals, vals.T, atol=1e-9):
            raise ValueError("similarity matrix must be symmetric")
        if not np.allclose(np.diag(vals), 1.0, atol=1e-9):
            raise ValueError("similarity diagonal must be 1")
        if vals.min() < -1e-9 or vals.max() > 1 + 1e-9:
            raise ValueError("similarity entries must lie in [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "layer_set", tuple(self.layer_set))

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _as_matrix(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("representation must be a 2-D matrix")
    return x


def hsic(x, y, kernel: KernelConfig = KernelConfig()) -> float:
    """Biased HSIC estimate between row representations x and y.

    tr(Kc @ Lc) / (n - 1)**2 with Kc, Lc the double-centered polynomial
    Gram matrices of x and y. Tiny negative rounding results clamp to 0.
    """
    x, y = _as_matrix(x), _as_matrix(y)
    n = x.shape[0]
    if n != y.shape[0]:
        raise ValueError("x and y must have the same number of rows")
    if n < 2:
        raise ValueError("hsic needs at least 2 rows")
    kc = K.center_gram(K.poly_gram(x, kernel.c, kernel.d))
    lc = K.center_gram(K.poly_gram(y, kernel.c, kernel.d))
    val = K.gram_dot(kc, lc) / (n - 1) ** 2
    return max(val, 0.0)


def cka(x, y, kernel: KernelConfig = KernelConfig()) -> float:
    """Centered kernel alignment: HSIC(x,y) / sqrt(HSIC(x,x) HSIC(y,y)).

    Returns 0 (with a DegenerateRepresentationWarning) when either
    self-HSIC vanishes, e.g. for constant-row representations.
    """
    sx = hsic(x, x, kernel)
    sy = hsic(y, y, kernel)
    if sx <= 0.0 or sy <= 0.0:
        warnings.warn(
            "constant representation has zero self-HSIC; CKA defined as 0",
            DegenerateRepresentationWarning,
        )
        return 0.0
    val = hsic(x, y, kernel) / np.sqrt(sx * sy)
    return float(min(max(val, 0.0), 1.0))


def _check_same_architecture(models) -> None:
    ref = models[0]
    for m in models[1:]:
        if m.layer_names != ref.layer_names:
            extra = set(m.layer_names) ^ set(ref.layer_names)
            name = sorted(extra)[0] if extra else m.layer_names[0]
            raise ValueError(f"models differ in architecture at layer {name!r}")
        for a, b in zip(ref.layers, m.layers):
            if a.weights.shape != b.weights.shape:
                raise ValueError(f"models differ in architecture at layer {a.name!r}")


def similarity_matrix(
    models: list[Model], layer_set, kernel: KernelConfig = KernelConfig()
) -> SimilarityMatrix:
    """Pairwise mean CKA of the chosen layers' weight matrices.

    Entry (i, k) averages cka over the layer set; the diagonal is forced
    to 1 exactly.
    """
    if not models:
        raise ValueError("no models given")
    layer_set = tuple(layer_set)
    if not layer_set:
        raise ValueError("layer_set must be non-empty")
    _check_same_architecture(models)
    for name in layer_set:
        models[0].layer(name)  # raises KeyError for unknown layers
    n = len(models)
    vals = np.eye(n)
    for i in range(n):
        for k in range(i + 1, n):
            score = np.mean(
                [
                    cka(models[i].layer(name).weights, models[k].layer(name).weights, kernel)
                    for name in layer_set
                ]
            )
            vals[i, k] = vals[k, i] = score
    return SimilarityMatrix(vals, layer_set)


def save_similarity_csv(sim: SimilarityMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer_set", ";".join(sim.layer_set)])
        writer.writerow([f"v{j}" for j in range(sim.n)])
        for row in sim.values:
            writer.writerow([repr(float(v)) for v in row])
