"""Model aggregation: similarity-weighted cluster averaging plus baselines.

The clustered scheme averages each cluster's members weighted by their
mean similarity to the rest of the cluster, aggregates the surrounding
super-cluster the same way, and blends the two half-and-half. Baselines:
sample-count FedAvg, magnitude-based pruning (MBP) and a fixed-period
layer-wise schedule (FedLAMA-style).

All averages are convex combinations computed layer-wise; layers outside
the active selection pass through from a reference model untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn import Model
from .sensitivity import LayerSelection
from .similarity import SimilarityMatrix, _check_same_architecture


@dataclass(frozen=True)
class ClusterWeights:
    cluster_id: int
    member_weights: dict[int, float]

    def __post_init__(self):
        object.__setattr__(self, "member_weights", dict(self.member_weights))
        if not self.member_weights:
            raise ValueError("cluster has no members")
        if sum(self.member_weights.values()) <= 0:
            raise ValueError("member weights must sum to a positive value")


@dataclass(frozen=True)
class AggregationStrategy:
    """kind: sigla | fedavg | mbp | fedlama."""

    kind: str
    prune_fraction: float | None = None
    period_schedule: dict[str, int] | None = None

    def __post_init__(self):
        if self.kind not in ("sigla", "fedavg", "mbp", "fedlama"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "mbp":
            if self.prune_fraction is None or not 0 < self.prune_fraction < 1:
                raise ValueError("mbp needs prune_fraction in (0, 1)")
        if self.period_schedule is not None:
            object.__setattr__(self, "period_schedule", dict(self.period_schedule))
            if any(p < 1 for p in self.period_schedule.values()):
                raise ValueError("schedule periods must be >= 1")


def _weighted_average(arrays, weights) -> np.ndarray:
    """Convex combination of equally-shaped arrays.

    Identical inputs return an exact copy (no float drift); zero weights
    are skipped so they cannot disturb the result either.
    """
    first = arrays[0]
    if all(np.array_equal(a, first) for a in arrays[1:]):
        return first.copy()
    total = float(np.sum(weights))
    acc = np.zeros_like(first)
    for a, w in zip(arrays, weights):
        share = w / total
        if share != 0.0:
            acc += share * a
    return acc


def similarity_weights(cluster_id: int, members, sim: SimilarityMatrix) -> ClusterWeights:
    """Per-member weights: mean similarity to the other members.

    Vehicle ids index the similarity matrix directly. A singleton cluster
    gets weight 1; an all-zero weight vector falls back to uniform with a
    warning.
    """
    members = sorted(members)
    if not members:
        raise ValueError("cluster has no members")
    weights = {}
    for i in members:
        others = [k for k in members if k != i]
        weights[i] = float(np.mean(sim.values[i, others])) if others else 1.0
    if sum(weights.values()) <= 0:
        warnings.warn("all-zero similarity weights; falling back to uniform")
        weights = {i: 1.0 for i in members}
    return ClusterWeights(cluster_id, weights)


def relevance_weights(candidates, reference_members, sim: SimilarityMatrix) -> dict[int, float]:
    """Weight of each candidate: mean similarity to the reference members.

    The self-similarity term is included when a candidate belongs to the
    reference set, so reference members are favoured over outsiders.
    """
    reference_members = sorted(reference_members)
    if not reference_members:
        raise ValueError("reference member set is empty")
    weights = {
        j: float(np.mean(sim.values[j, reference_members])) for j in sorted(candidates)
    }
    if sum(weights.values()) <= 0:
        warnings.warn("all-zero relevance weights; falling back to uniform")
        weights = {j: 1.0 for j in weights}
    return weights


def _aggregate(models, member_weights, selection, reference) -> Model:
    members = sorted(member_weights)
    stack = [models[i] for i in members]
    _check_same_architecture(stack)
    template = stack[0]
    selected = set(template.layer_names if selection is None else selection.selected)
    unknown = selected - set(template.layer_names)
    if unknown:
        raise KeyError(sorted(unknown)[0])
    if selected != set(template.layer_names) and reference is None:
        raise ValueError("partial layer selection needs a reference model")
    weights = [member_weights[i] for i in members]
    new_layers = {}
    for layer in template.layers:
        name = layer.name
        if name in selected:
            w = _weighted_average([m.layer(name).weights for m in stack], weights)
            b = _weighted_average([m.layer(name).bias for m in stack], weights)
            new_layers[name] = layer.with_params(w, b)
        else:
            new_layers[name] = reference.layer(name)
    return template.with_layers(new_layers)


def weighted_layer_average(
    models: dict[int, Model],
    weights: dict[int, float],
    selection: LayerSelection | None = None,
    reference: Model | None = None,
) -> Model:
    """Explicitly weighted layer-wise model average.

    Selected layers are averaged under the given weights (normalised
    internally); unselected layers pass through from ``reference``.
    """
    return _aggregate(models, weights, selection, reference)


def intra_cluster_aggregate(
    models: dict[int, Model],
    cluster,
    sim: SimilarityMatrix,
    selection: LayerSelection | None = None,
    reference: Model | None = None,
    weighting: str = "similarity",
) -> Model:
    """Similarity-weighted average of one cluster's models.

    Weights follow :func:`similarity_weights` over the given member set
    (or are uniform with ``weighting='uniform'``); selected layers are
    averaged, unselected layers are taken verbatim from ``reference``
    (the pre-round global model).
    """
    if weighting == "uniform":
        weights = {i: 1.0 for i in cluster}
    elif weighting == "similarity":
        weights = similarity_weights(-1, cluster, sim).member_weights
    else:
        raise ValueError("weighting must be 'similarity' or 'uniform'")
    return _aggregate(models, weights, selection, reference)


def inter_cluster_aggregate(
    models: dict[int, Model],
    super_cluster,
    primary_cluster,
    sim: SimilarityMatrix,
    selection: LayerSelection | None = None,
    reference: Model | None = None,
    weight_reference: str = "primary",
    weighting: str = "similarity",
) -> Model:
    """Weighted average over a super-cluster.

    Each super-cluster member is weighted by its mean similarity to the
    primary cluster's members (or to the whole super-cluster when
    ``weight_reference='super'``).
    """
    super_set = set(super_cluster)
    primary_set = set(primary_cluster)
    if not primary_set <= super_set:
        raise ValueError("primary cluster must be contained in its super-cluster")
    if weight_reference not in ("primary", "super"):
        raise ValueError("weight_reference must be 'primary' or 'super'")
    if weighting == "uniform":
        weights = {j: 1.0 for j in super_set}
    elif weighting == "similarity":
        ref = primary_set if weight_reference == "primary" else super_set
        weights = relevance_weights(super_set, ref, sim)
    else:
        raise ValueError("weighting must be 'similarity' or 'uniform'")
    return _aggregate(models, weights, selection, reference)


def global_blend(
    theta_k: Model, theta_k_plus: Model, selection: LayerSelection | None = None
) -> Model:
    """Parameter-wise mean of a cluster model and its super-cluster model."""
    _check_same_architecture([theta_k, theta_k_plus])
    selected = set(theta_k.layer_names if selection is None else selection.selected)
    new_layers = {}
    for layer in theta_k.layers:
        if layer.name in selected:
            other = theta_k_plus.layer(layer.name)
            new_layers[layer.name] = layer.with_params(
                _weighted_average([layer.weights, other.weights], [1.0, 1.0]),
                _weighted_average([layer.bias, other.bias], [1.0, 1.0]),
            )
        else:
            new_layers[layer.name] = layer
    return theta_k.with_layers(new_layers)


def fedavg(models: dict[int, Model], sample_counts: dict[int, int]) -> Model:
    """Sample-count-weighted mean of all parameters of all layers."""
    if not models:
        raise ValueError("no models to aggregate")
    missing = set(models) - set(sample_counts)
    if missing:
        raise ValueError(f"missing sample counts for vehicles {sorted(missing)}")
    weights = {i: float(sample_counts[i]) for i in models}
    if sum(weights.values()) <= 0:
        raise ValueError("sample counts must sum to a positive value")
    return weighted_layer_average(models, weights)


def mbp_prune(model: Model, prune_fraction: float):
    """Zero the globally smallest-magnitude weights (biases exempt).

    Zeroes floor(prune_fraction * total_weights) entries, breaking
    magnitude ties towards earlier layers. Returns (pruned model, number
    of weights zeroed); transmission accounting should count only the
    remaining nonzero weights plus all biases.
    """
    if not 0 < prune_fraction < 1:
        raise ValueError("prune_fraction must be in (0, 1)")
    flat = np.concatenate([l.weights.ravel() for l in model.layers])
    n_zero = int(np.floor(prune_fraction * flat.size))
    if n_zero == 0:
        return model, 0
    order = np.argsort(np.abs(flat), kind="stable")
    flat = flat.copy()
    flat[order[:n_zero]] = 0.0
    new_layers = {}
    pos = 0
    for layer in model.layers:
        size = layer.weights.size
        w = flat[pos : pos + size].reshape(layer.weights.shape)
        new_layers[layer.name] = layer.with_params(w, layer.bias)
        pos += size
    return model.with_layers(new_layers), n_zero


def nonzero_param_count(model: Model) -> int:
    """Nonzero weights plus all biases; the size MBP actually transmits."""
    return int(
        sum(np.count_nonzero(l.weights) for l in model.layers)
        + sum(l.bias.size for l in model.layers)
    )


def fedlama_schedule(round_idx: int, schedule: dict[str, int]):
    """Layers due for aggregation this round: round % period == 0."""
    if round_idx < 1:
        raise ValueError("rounds are numbered from 1")
    return {name for name, period in schedule.items() if round_idx % period == 0}
