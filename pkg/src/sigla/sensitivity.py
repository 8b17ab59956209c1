"""Layer importance scoring and transmission-layer selection.

A layer's importance is the accuracy drop observed when zero-mean
Gaussian noise is injected into its parameters, averaged over a few
trials. Layer selection turns the scores into the subset of layers worth
transmitting, under one of three threshold policies; the output layer is
always kept so aggregated models remain valid classifiers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nn import Model, evaluate, param_count
from .rng import TAG_PERTURB, derive_seed


@dataclass(frozen=True)
class ImportanceReport:
    vehicle_id: int
    scores: dict[str, float]  # layer name -> importance
    epsilon: float  # relative noise scale (fraction of layer weight RMS)
    eval_set_size: int

    def __post_init__(self):
        object.__setattr__(self, "scores", dict(self.scores))
        if any(v < 0 for v in self.scores.values()):
            raise ValueError("importance scores must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.eval_set_size < 1:
            raise ValueError("eval_set_size must be positive")


@dataclass(frozen=True)
class LayerSelection:
    selected: tuple[str, ...]  # model layer order
    threshold: float
    reduction_factor: float

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(self.selected))
        if not self.selected:
            raise ValueError("selection must not be empty")


@dataclass(frozen=True)
class ThresholdPolicy:
    """fixed(tau) | top_k(k) | budget_fraction(f)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "top_k", "budget_fraction"):
            raise ValueError(f"unknown threshold policy {self.kind!r}")

    @classmethod
    def fixed(cls, tau: float) -> "ThresholdPolicy":
        return cls("fixed", float(tau))

    @classmethod
    def top_k(cls, k: int) -> "ThresholdPolicy":
        return cls("top_k", int(k))

    @classmethod
    def budget_fraction(cls, f: float) -> "ThresholdPolicy":
        return cls("budget_fraction", float(f))


def perturb_layer(model: Model, layer: str, epsilon: float, seed: int) -> Model:
    """Copy of the model with N(0, epsilon^2) noise on one layer.

    ``epsilon`` is the absolute noise standard deviation, applied to the
    layer's weights and bias; every other layer is untouched. epsilon 0
    returns the model unchanged.
    """
    target = model.layer(layer)  # raises KeyError for unknown layers
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return model
    rng = np.random.default_rng(seed)
    w = target.weights + epsilon * rng.standard_normal(target.weights.shape)
    b = target.bias + epsilon * rng.standard_normal(target.bias.shape)
    return model.with_layers({layer: target.with_params(w, b)})


def layer_noise_scale(model: Model, layer: str, epsilon: float) -> float:
    """Absolute noise stddev for a layer: epsilon times its weight RMS."""
    w = model.layer(layer).weights
    return float(epsilon * np.sqrt(np.mean(w**2)))


def importance_scores(
    model: Model,
    eval_data,
    epsilon: float = 0.1,
    n_trials: int = 3,
    seed: int = 0,
    vehicle_id: int = -1,
) -> ImportanceReport:
    """Mean accuracy drop per layer under repeated Gaussian perturbation.

    The baseline accuracy is evaluated once; each layer is then perturbed
    ``n_trials`` times with noise scaled to ``epsilon`` times that layer's
    weight RMS, and the score is the mean absolute accuracy change.
    Deterministic given the seed and invariant to sample order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    baseline = evaluate(model, eval_data).accuracy
    scores = {}
    for j, layer in enumerate(model.layers):
        sigma = layer_noise_scale(model, layer.name, epsilon)
        drops = []
        for t in range(n_trials):
            perturbed = perturb_layer(
                model, layer.name, sigma, derive_seed(seed, TAG_PERTURB, j, t)
            )
            drops.append(abs(baseline - evaluate(perturbed, eval_data).accuracy))
        scores[layer.name] = float(np.mean(drops))
    return ImportanceReport(
        vehicle_id=vehicle_id,
        scores=scores,
        epsilon=epsilon,
        eval_set_size=len(eval_data.labels),
    )


def full_selection(model: Model) -> LayerSelection:
    """All layers selected (reduction factor exactly 1)."""
    return LayerSelection(model.layer_names, threshold=0.0, reduction_factor=1.0)


def select_layers(
    report: ImportanceReport, model: Model, policy: ThresholdPolicy
) -> LayerSelection:
    """Turn importance scores into a transmission layer set.

    fixed(tau): layers with score >= tau. top_k(k): the k highest-scored
    layers. budget_fraction(f): greedily add layers in descending score
    until the next one would push the parameter fraction over f. The
    output layer is always included; the reduction factor is the selected
    parameter count over the total.
    """
    names = model.layer_names
    if set(report.scores) != set(names):
        raise ValueError("report does not cover exactly the model layers")
    output = model.output_layer_name
    total = param_count(model)
    # descending score, ties towards earlier layers
    ranked = sorted(names, key=lambda n: (-report.scores[n], names.index(n)))

    if policy.kind == "fixed":
        tau = policy.value
        chosen = {n for n in names if report.scores[n] >= tau} | {output}
        threshold = tau
    elif policy.kind == "top_k":
        k = int(policy.value)
        if not 1 <= k <= len(names):
            raise ValueError(f"top_k k={k} outside [1, {len(names)}]")
        chosen = set(ranked[:k]) | {output}
        threshold = min(report.scores[n] for n in chosen)
    else:  # budget_fraction
        f = policy.value
        if not 0 < f <= 1:
            raise ValueError("budget fraction must be in (0, 1]")
        chosen = {output}
        used = param_count(model, [output])
        for name in ranked:
            if name == output:
                continue
            add = param_count(model, [name])
            if (used + add) / total > f:
                break
            chosen.add(name)
            used += add
        threshold = min(report.scores[n] for n in chosen)

    selected = tuple(n for n in names if n in chosen)
    return LayerSelection(
        selected=selected,
        threshold=float(threshold),
        reduction_factor=param_count(model, selected) / total,
    )


def report_to_json(report: ImportanceReport) -> dict:
    return {
        "vehicle_id": report.vehicle_id,
        "epsilon": report.epsilon,
        "eval_set_size": report.eval_set_size,
        "scores": dict(report.scores),
    }


def save_report_json(report: ImportanceReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report_to_json(report), f, indent=2)
